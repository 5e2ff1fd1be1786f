"""Densities sampled on regular midpoint lattices, plus the algebra the solvers need.

Cell ``i`` along an axis covers ``[lower + i*h, lower + (i+1)*h]`` and the stored
value is the density at its center, so integrals are midpoint sums.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal

from .errors import (
    AllZero,
    GridMismatch,
    InvalidInput,
    NegativeEntry,
    NoisePDViolation,
    NotPSD,
    ShapeMismatch,
    SingularInnerMatrix,
    TruncationError,
)

MAX_CELLS = 2**24
MIN_POINTS = 16
# Relative threshold below which a cell is treated as outside the support when
# evaluating log-density residuals (roundoff in exp tails is amplified by log).
EFFECTIVE_SUPPORT = 1e-8


def _as_vector(values, dim=None) -> tuple[float, ...]:
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.ndim != 1 or (dim is not None and arr.size != dim):
        raise ShapeMismatch(f"expected a vector of length {dim}, got shape {arr.shape}")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class GridSpec:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    points: tuple[int, ...]

    def __post_init__(self):
        lower = _as_vector(self.lower)
        upper = _as_vector(self.upper, len(lower))
        points = tuple(int(p) for p in np.atleast_1d(self.points))
        if len(points) != len(lower):
            raise ShapeMismatch("lower, upper and points must have equal length")
        if not 1 <= len(lower) <= 3:
            raise InvalidInput("grids must have 1 to 3 axes")
        if any(lo >= up for lo, up in zip(lower, upper)):
            raise InvalidInput("every axis needs lower < upper")
        if any(p < MIN_POINTS for p in points):
            raise InvalidInput(f"every axis needs at least {MIN_POINTS} points")
        if math.prod(points) > MAX_CELLS:
            raise InvalidInput("lattice exceeds 2**24 cells")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "points", points)

    @property
    def dim(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    @property
    def steps(self) -> tuple[float, ...]:
        return tuple((up - lo) / n for lo, up, n in zip(self.lower, self.upper, self.points))

    @property
    def cell_volume(self) -> float:
        return math.prod(self.steps)

    def axis(self, i: int) -> np.ndarray:
        h = self.steps[i]
        return self.lower[i] + (np.arange(self.points[i]) + 0.5) * h

    def axes(self) -> list[np.ndarray]:
        return [self.axis(i) for i in range(self.dim)]

    def coordinates(self) -> list[np.ndarray]:
        """Per-axis cell-center arrays shaped to broadcast against the lattice."""
        out = []
        for i, ax in enumerate(self.axes()):
            shape = [1] * self.dim
            shape[i] = ax.size
            out.append(ax.reshape(shape))
        return out

    def points_matrix(self) -> np.ndarray:
        """All cell centers as an (N, dim) array in row-major order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def quadratic_form(self, matrix) -> np.ndarray:
        """Field x -> xᵀ A x over the lattice."""
        a = np.asarray(matrix, dtype=float).reshape(self.dim, self.dim)
        xs = self.coordinates()
        out = np.zeros(self.shape)
        for i in range(self.dim):
            for j in range(self.dim):
                if a[i, j] != 0.0:
                    out = out + a[i, j] * xs[i] * xs[j]
        return out

    def linear_form(self, vector) -> np.ndarray:
        v = np.asarray(vector, dtype=float).reshape(self.dim)
        out = np.zeros(self.shape)
        for i, x in enumerate(self.coordinates()):
            if v[i] != 0.0:
                out = out + v[i] * x
        return out

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.lower, self.upper, tuple(p * factor for p in self.points))

    @classmethod
    def centered(cls, mean, cov, points, width: float = 8.0) -> "GridSpec":
        """Box of ``mean ± width·σ`` per axis."""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        sd = np.sqrt(np.diag(np.atleast_2d(np.asarray(cov, dtype=float))))
        pts = np.broadcast_to(np.asarray(points, dtype=int), mean.shape)
        return cls(tuple(mean - width * sd), tuple(mean + width * sd), tuple(pts))

    @classmethod
    def half_line(cls, second_moment: float, points: int, width: float = 8.0) -> "GridSpec":
        return cls((0.0,), (width * math.sqrt(second_moment),), (points,))


def _steps_match(a: GridSpec, b: GridSpec) -> bool:
    return a.dim == b.dim and all(
        math.isclose(x, y, rel_tol=1e-12, abs_tol=0.0) for x, y in zip(a.steps, b.steps)
    )


@dataclass(frozen=True)
class GridDensity:
    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ShapeMismatch(f"values shape {vals.shape} does not match grid {self.grid.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def cell_volume(self) -> float:
        return self.grid.cell_volume

    @property
    def dim(self) -> int:
        return self.grid.dim

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def support_mask(self, threshold: float = EFFECTIVE_SUPPORT) -> np.ndarray:
        return self.values >= threshold * self.values.max()

    def integrate(self, field_values) -> float:
        """∫ g f dx for a field g on the lattice."""
        return float(np.sum(np.asarray(field_values) * self.values) * self.cell_volume)


def make_density(grid: GridSpec, raw) -> GridDensity:
    raw = np.asarray(raw, dtype=float)
    if raw.shape != grid.shape:
        raise ShapeMismatch(f"raw shape {raw.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(raw)):
        raise InvalidInput("density values must be finite")
    if np.any(raw < 0):
        raise NegativeEntry("density values must be nonnegative")
    total = raw.sum() * grid.cell_volume
    if total <= 0:
        raise AllZero("density has no mass")
    return GridDensity(grid, raw / total)


def density_from_log(grid: GridSpec, log_values) -> GridDensity:
    """Normalize exp(log_values) without overflow."""
    log_values = np.asarray(log_values, dtype=float)
    return make_density(grid, np.exp(log_values - log_values.max()))


@dataclass(frozen=True)
class MomentSummary:
    mean: np.ndarray
    correlation: np.ndarray
    covariance: np.ndarray


def moments(f: GridDensity) -> MomentSummary:
    xs = f.grid.coordinates()
    d = f.dim
    mean = np.array([f.integrate(x) for x in xs])
    corr = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            corr[i, j] = corr[j, i] = f.integrate(xs[i] * xs[j])
    cov = corr - np.outer(mean, mean)
    return MomentSummary(mean, corr, 0.5 * (cov + cov.T))


def convolution_grid(a: GridSpec, b: GridSpec) -> GridSpec:
    """Lattice holding every pairwise sum of cell centers of ``a`` and ``b``."""
    if not _steps_match(a, b):
        raise GridMismatch("convolution needs equal dimension and cell widths")
    steps = a.steps
    lower = tuple(la + lb + 0.5 * h for la, lb, h in zip(a.lower, b.lower, steps))
    points = tuple(na + nb - 1 for na, nb in zip(a.points, b.points))
    upper = tuple(lo + n * h for lo, n, h in zip(lower, points, steps))
    return GridSpec(lower, upper, points)


def convolve(fX: GridDensity, fW: GridDensity, method: str = "auto") -> GridDensity:
    """Density of X + W on the Minkowski-sum lattice.

    ``method`` is passed to :func:`scipy.signal.convolve` ("direct", "fft" or
    "auto"); the transform path is clipped at zero to remove roundoff ripples.
    """
    out_grid = convolution_grid(fX.grid, fW.grid)
    vals = signal.convolve(fX.values, fW.values, mode="full", method=method)
    vals = np.maximum(vals, 0.0) * fX.cell_volume
    return make_density(out_grid, vals)


def correlate_valid(kernel: GridDensity, field_on_sum_grid: np.ndarray) -> np.ndarray:
    """x -> ∫ kernel(w) g(x + w) dw, evaluated on the first factor's lattice.

    ``field_on_sum_grid`` lives on ``convolution_grid(X, kernel)``; this is the
    adjoint of :func:`convolve` with respect to the first argument.
    """
    flipped = kernel.values[tuple(slice(None, None, -1) for _ in range(kernel.dim))]
    return signal.convolve(field_on_sum_grid, flipped, mode="valid") * kernel.cell_volume


def crop(f: GridDensity, lower: Sequence[float], upper: Sequence[float], max_loss: float = 1e-6) -> GridDensity:
    """Restrict to the cells whose centers lie inside the box; renormalize."""
    slices = []
    for i, ax in enumerate(f.grid.axes()):
        idx = np.nonzero((ax >= lower[i]) & (ax <= upper[i]))[0]
        if idx.size < MIN_POINTS:
            raise InvalidInput("crop box keeps too few cells")
        slices.append(slice(idx[0], idx[-1] + 1))
    kept = f.values[tuple(slices)]
    lost = 1.0 - kept.sum() * f.cell_volume
    if lost > max_loss:
        raise TruncationError(f"cropping would discard {lost:.3e} of the mass")
    h = f.grid.steps
    new_lower = tuple(f.grid.lower[i] + s.start * h[i] for i, s in enumerate(slices))
    new_upper = tuple(f.grid.lower[i] + s.stop * h[i] for i, s in enumerate(slices))
    return make_density(GridSpec(new_lower, new_upper, kept.shape), kept)


# --- singular second-moment reduction ------------------------------------------------

RANK_TOL = 1e-10


@dataclass(frozen=True)
class ReducedProblem:
    projector: np.ndarray  # Q: columns are eigenvectors, nonzero block first
    whitener: np.ndarray  # D = [[I, -Bᵀ C⁻¹], [0, I]]
    effective_dim: int
    reduced_noise_cov: np.ndarray  # diag(A - Bᵀ C⁻¹ B, C)
    reduced_signal_corr: np.ndarray  # diagonal eigenvalues, zero beyond effective_dim

    @property
    def transform(self) -> np.ndarray:
        """Map x -> D Qᵀ x taking the original coordinates to the reduced ones."""
        return self.whitener @ self.projector.T


def _symmetric(a, name) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"{name} must be square")
    if not np.allclose(a, a.T, rtol=1e-10, atol=1e-12):
        raise InvalidInput(f"{name} must be symmetric")
    return 0.5 * (a + a.T)


def reduce_singular(omega_X, omega_W) -> ReducedProblem:
    omega_X = _symmetric(omega_X, "omega_X")
    omega_W = _symmetric(omega_W, "omega_W")
    if omega_X.shape != omega_W.shape:
        raise ShapeMismatch("omega_X and omega_W must have equal size")
    n = omega_X.shape[0]
    evals, evecs = np.linalg.eigh(omega_X)
    scale = max(abs(evals).max(), 1e-300)
    if evals.min() < -RANK_TOL * scale:
        raise NotPSD("omega_X has a negative eigenvalue")
    if np.linalg.eigvalsh(omega_W).min() <= 0:
        raise NoisePDViolation("omega_W must be positive definite")
    order = np.argsort(-evals)
    evals, Q = evals[order], evecs[:, order]
    m = int(np.sum(evals > RANK_TOL * scale))
    evals = np.where(np.arange(n) < m, evals, 0.0)

    rotated = Q.T @ omega_W @ Q
    D = np.eye(n)
    if m < n:
        B = rotated[m:, :m]
        C = rotated[m:, m:]
        try:
            D[:m, m:] = -np.linalg.solve(C, B).T
        except np.linalg.LinAlgError as exc:
            raise SingularInnerMatrix("noise block on the null space is singular") from exc
    reduced = D @ rotated @ D.T
    reduced[:m, m:] = 0.0
    reduced[m:, :m] = 0.0
    return ReducedProblem(Q, D, m, 0.5 * (reduced + reduced.T), np.diag(evals))


# --- serialization --------------------------------------------------------------------

_MAGIC = b"IVGD"


def to_bytes(f: GridDensity) -> bytes:
    """Header (magic, dim, lower, upper, points) followed by little-endian float64 values."""
    g = f.grid
    head = _MAGIC + struct.pack("<I", g.dim)
    head += struct.pack(f"<{g.dim}d", *g.lower) + struct.pack(f"<{g.dim}d", *g.upper)
    head += struct.pack(f"<{g.dim}Q", *g.points)
    return head + np.ascontiguousarray(f.values, dtype="<f8").tobytes()


def from_bytes(blob: bytes) -> GridDensity:
    if blob[:4] != _MAGIC:
        raise InvalidInput("not a serialized grid density")
    (dim,) = struct.unpack_from("<I", blob, 4)
    off = 8
    lower = struct.unpack_from(f"<{dim}d", blob, off)
    off += 8 * dim
    upper = struct.unpack_from(f"<{dim}d", blob, off)
    off += 8 * dim
    points = struct.unpack_from(f"<{dim}Q", blob, off)
    off += 8 * dim
    grid = GridSpec(lower, upper, points)
    vals = np.frombuffer(blob, dtype="<f8", offset=off).reshape(grid.shape)
    return GridDensity(grid, vals.astype(float))


def to_csv(f: GridDensity) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"x{i}" for i in range(f.dim)] + ["value"])
    for row, value in zip(f.grid.points_matrix(), f.values.ravel()):
        writer.writerow([repr(float(c)) for c in row] + [repr(float(value))])
    return buf.getvalue()


def from_csv(text: str, grid: GridSpec) -> GridDensity:
    """Read values written by :func:`to_csv`; coordinates are checked against ``grid``."""
    rows = list(csv.reader(io.StringIO(text)))[1:]
    try:
        data = np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise InvalidInput(f"unreadable CSV value: {exc}") from exc
    if data.shape != (math.prod(grid.shape), grid.dim + 1):
        raise ShapeMismatch("CSV does not match the grid")
    if not np.allclose(data[:, :-1], grid.points_matrix(), rtol=1e-12, atol=1e-12):
        raise GridMismatch("CSV coordinates do not match the grid")
    return make_density(grid, data[:, -1].reshape(grid.shape))
