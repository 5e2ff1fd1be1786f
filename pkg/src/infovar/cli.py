"""Command-line front end: ``infovar {solve,verify,sweep,catalog,wiretap}``.

Exit codes: 0 success, 1 inequality violation or failed verification,
2 solver non-convergence, 3 invalid input.
"""

from __future__ import annotations

import csv
import io
import json
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import click
import numpy as np

from . import closed_forms as cf
from .density_core import from_csv, to_csv
from .errors import InfovarError, InvalidInput, NonConvergence, ReductionFailure
from .harness import SweepConfig, margin_sweep, problem_grid
from .problems import (
    ProblemSpec,
    _plain,
    multipliers_to_dict,
    problem_from_dict,
    problem_to_dict,
    report_to_dict,
    wiretap_to_dict,
)
from .stationarity import euler_lagrange_residual, fit_multipliers, second_variation_check
from .variational_solver import solve, solve_wiretap

EXIT_OK, EXIT_VIOLATION, EXIT_NONCONVERGENCE, EXIT_INVALID = 0, 1, 2, 3
COMMANDS = ("solve", "verify", "sweep", "catalog", "wiretap")
DEFAULT_TOLERANCES = {"el_residual": 1e-5, "violation": 1e-4, "psd": 1e-9, "feasibility": 1e-6}


@dataclass
class RunConfig:
    command: str
    spec_path: Path | None = None
    out_dir: Path = Path(".")
    format: str = "json"
    tolerances: dict = field(default_factory=dict)
    samples: int = 200
    seed: int = 0
    generator: str = "mixture"
    density_path: Path | None = None
    timestamp: bool = True
    second_moments: tuple[float, ...] = (1.0,)
    chi_shapes: tuple[float, ...] = (1.0, 3.0, 4.0)
    wiretap: tuple[float, float, float, float] | None = None

    def tolerance(self, key: str) -> float:
        return float(self.tolerances.get(key, DEFAULT_TOLERANCES[key]))


def _parse_tolerances(pairs) -> dict:
    out = {}
    for item in pairs:
        key, sep, value = item.partition("=")
        if not sep or key not in DEFAULT_TOLERANCES:
            raise InvalidInput(f"bad --tol entry {item!r}; keys are {', '.join(DEFAULT_TOLERANCES)}")
        try:
            out[key] = float(value)
        except ValueError as exc:
            raise InvalidInput(f"bad --tol value {value!r}") from exc
    return out


def _load_spec(path: Path | None) -> ProblemSpec:
    if path is None:
        raise InvalidInput("this command needs --spec")
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInput(f"cannot read spec {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidInput("spec must be a JSON object")
    return problem_from_dict(data)


class _Outputs:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dir = Path(cfg.out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.summary: list[str] = []

    def json(self, payload: dict):
        if self.cfg.timestamp:
            payload = {"generated_at": datetime.now(timezone.utc).isoformat(), **payload}
        text = json.dumps(_plain(payload), indent=2, sort_keys=True)
        (self.dir / "report.json").write_text(text + "\n")

    def text(self, name: str, content: str):
        (self.dir / name).write_text(content)

    def line(self, text: str):
        self.summary.append(text)

    def finish(self):
        body = "\n".join(self.summary) + "\n"
        self.text("summary.txt", body)
        click.echo(body, nl=False)

    @property
    def wants_json(self) -> bool:
        return self.cfg.format in ("json", "both")

    @property
    def wants_csv(self) -> bool:
        return self.cfg.format in ("csv", "both")


# --- commands -------------------------------------------------------------------------


def _solve(cfg: RunConfig, out: _Outputs) -> int:
    problem = _load_spec(cfg.spec_path)
    if problem.kind == "wiretap":
        return _wiretap_from_problem(problem, out)
    report = solve(problem)
    if out.wants_json:
        out.json({"problem": problem_to_dict(problem), "report": report_to_dict(report)})
    if out.wants_csv:
        out.text("density.csv", to_csv(report.extremal))
    out.line(f"kind: {problem.kind}")
    out.line(f"objective: {report.objective_value:.10g}")
    out.line(f"el_residual_norm: {report.el_residual_norm:.3e}")
    out.line(f"constraint_violation: {report.constraint_violation:.3e}")
    out.line(f"iterations: {report.iterations}")
    out.line(f"converged: {report.converged}")
    for note in report.notes:
        out.line(f"note: {note}")
    return EXIT_OK if report.converged else EXIT_NONCONVERGENCE


def _verify(cfg: RunConfig, out: _Outputs) -> int:
    """Check a supplied density against the problem's stationarity conditions.

    The multipliers are the closed-form ones of the problem's extremal, so a
    density that is not the extremal leaves a residual.
    """
    problem = _load_spec(cfg.spec_path)
    if cfg.density_path is None:
        raise InvalidInput("verify needs --density")
    grid = problem_grid(problem)
    try:
        f = from_csv(Path(cfg.density_path).read_text(), grid)
    except OSError as exc:
        raise InvalidInput(f"cannot read density {cfg.density_path}: {exc}") from exc
    from .harness import extremal_density, feasibility_defect

    reference = extremal_density(problem, grid)
    m = fit_multipliers(problem, reference)
    el = euler_lagrange_residual(problem, f, m)
    psd = second_variation_check(problem, f, m=m) if problem.kind != "eei_two_noise" else None
    defect = feasibility_defect(problem, f)
    checks = {
        "el_residual": el.l2_norm <= cfg.tolerance("el_residual"),
        "second_variation": psd is None or psd.min_relative_eigenvalue >= -cfg.tolerance("psd"),
        "feasibility": defect <= cfg.tolerance("feasibility"),
    }
    if problem.kind == "eei":
        checks["alpha1_gate"] = m.alpha1 <= 1.0 - float(problem.mu)
    payload = {
        "problem": problem_to_dict(problem),
        "el_residual_l2": el.l2_norm,
        "el_residual_linf": el.linf_norm,
        "feasibility_defect": defect,
        "multipliers": multipliers_to_dict(m),
        "checks": checks,
    }
    if psd is not None:
        payload["second_variation"] = {
            "min_eigenvalue": psd.min_eigenvalue_over_grid,
            "min_relative_eigenvalue": psd.min_relative_eigenvalue,
            "worst_cell": list(psd.worst_cell),
        }
    if out.wants_json:
        out.json(payload)
    if out.wants_csv:
        out.text("residual.csv", _field_csv(grid, el.residual))
    for name, ok in checks.items():
        out.line(f"{name}: {'pass' if ok else 'FAIL'}")
    out.line(f"el_residual_l2: {el.l2_norm:.3e}")
    return EXIT_OK if all(checks.values()) else EXIT_VIOLATION


def _field_csv(grid, values) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i}" for i in range(grid.dim)] + ["residual"])
    for row, v in zip(grid.points_matrix(), np.asarray(values).ravel()):
        w.writerow([repr(float(c)) for c in row] + [repr(float(v))])
    return buf.getvalue()


def _sweep(cfg: RunConfig, out: _Outputs) -> int:
    problem = _load_spec(cfg.spec_path)
    table = margin_sweep(SweepConfig(problem, cfg.samples, cfg.seed, cfg.generator,
                                     tolerance=cfg.tolerance("violation")))
    out.text("margins.csv", table.to_csv())
    if out.wants_json:
        out.json({
            "problem": problem_to_dict(problem),
            "n_samples": len(table.rows),
            "generator": cfg.generator,
            "min_margin": table.min_margin,
            "mean_margin": table.mean_margin,
            "violated": table.violated,
            "tolerance": table.tolerance,
        })
    out.line(f"kind: {problem.kind}")
    out.line(f"samples: {len(table.rows)}")
    out.line(f"min_margin: {table.min_margin:.6e}")
    out.line(f"mean_margin: {table.mean_margin:.6e}")
    out.line(f"violated: {table.violated}")
    return EXIT_VIOLATION if table.violated else EXIT_OK


def _catalog(cfg: RunConfig, out: _Outputs) -> int:
    rows = []
    for m2 in cfg.second_moments:
        if m2 <= 0:
            raise InvalidInput("second moments must be positive")
        cov = np.array([[m2]])
        rows.append(("gaussian", m2, "", cf.gaussian_entropy(cov), float(cf.gaussian_fisher(cov)[0, 0])))
        rows.append(("half_normal", m2, 1.0, cf.half_normal_entropy(m2),
                     cf.chi_fisher(cf.NonnegFamilyParams("half_normal", m2))))
        for k in cfg.chi_shapes:
            if k <= 0:
                raise InvalidInput("chi shapes must be positive")
            p = cf.NonnegFamilyParams("chi", m2, k)
            rows.append(("chi", m2, k, cf.chi_entropy(p), cf.chi_fisher(p)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["family", "second_moment", "shape", "entropy", "fisher"])
    for r in rows:
        w.writerow([r[0], repr(r[1]), r[2] if r[2] == "" else repr(r[2]), repr(r[3]), repr(r[4])])
    out.text("catalog.csv", buf.getvalue())
    if out.wants_json:
        out.json({"catalog": [dict(zip(("family", "second_moment", "shape", "entropy", "fisher"), r)) for r in rows]})
    for r in rows:
        shape = "" if r[2] == "" else f" k={r[2]:g}"
        out.line(f"{r[0]}{shape} m2={r[1]:g}: entropy={r[3]:.6f} fisher={r[4]:.6g}")
    return EXIT_OK


def _wiretap(cfg: RunConfig, out: _Outputs) -> int:
    if cfg.wiretap is not None:
        a, w, z, r = cfg.wiretap
        return _wiretap_run(a, w, z, r, out)
    return _wiretap_from_problem(_load_spec(cfg.spec_path), out)


def _wiretap_from_problem(problem: ProblemSpec, out: _Outputs) -> int:
    if problem.wiretap is None:
        raise InvalidInput("spec has no wiretap parameters")
    p = problem.wiretap
    return _wiretap_run(p.gain, p.sigma_w2, p.sigma_z2, p.rate, out)


def _wiretap_run(a, w, z, r, out: _Outputs) -> int:
    report = solve_wiretap(a, w, z, r)
    if out.wants_json:
        out.json({"wiretap": {"gain": a, "sigma_w2": w, "sigma_z2": z, "rate": r}, "report": wiretap_to_dict(report)})
    if out.wants_csv:
        out.text("density.csv", to_csv(report.extremal_input))
    out.line(f"mse_legitimate: {report.mse_legitimate:.10g}")
    out.line(f"mse_eavesdropper: {report.mse_eavesdropper:.10g}")
    out.line(f"mse_gap: {report.mse_gap:.10g}")
    out.line(f"conditional_mean_slope: {report.conditional_mean_slope:.10g}")
    out.line(f"linearity_residual: {report.linearity_residual:.3e}")
    out.line(f"converged: {report.converged}")
    return EXIT_OK if report.converged else EXIT_NONCONVERGENCE


_HANDLERS = {"solve": _solve, "verify": _verify, "sweep": _sweep, "catalog": _catalog, "wiretap": _wiretap}


def run(cfg: RunConfig) -> int:
    """Execute one command and map failures onto exit codes."""
    try:
        if cfg.command not in _HANDLERS:
            raise InvalidInput(f"unknown command {cfg.command!r}")
        if cfg.format not in ("json", "csv", "both"):
            raise InvalidInput(f"unknown format {cfg.format!r}")
        out = _Outputs(cfg)
        code = _HANDLERS[cfg.command](cfg, out)
        out.finish()
        return code
    except InvalidInput as exc:
        click.echo(f"invalid input: {exc}", err=True)
        return EXIT_INVALID
    except (NonConvergence, ReductionFailure) as exc:
        click.echo(f"solver did not converge: {exc}", err=True)
        return EXIT_NONCONVERGENCE
    except InfovarError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_INVALID
    except OSError as exc:
        click.echo(f"cannot write outputs: {exc}", err=True)
        return EXIT_INVALID


# --- click wiring ---------------------------------------------------------------------


def _common(fn):
    options = [
        click.option("--spec", "spec_path", type=click.Path(path_type=Path), default=None,
                     help="Problem description (JSON)."),
        click.option("--out", "out_dir", type=click.Path(path_type=Path), default=Path("."),
                     show_default=True, help="Output directory."),
        click.option("--format", "fmt", type=click.Choice(["json", "csv", "both"]), default="json",
                     show_default=True),
        click.option("--tol", "tol", multiple=True, help="Tolerance override KEY=VAL (repeatable)."),
        click.option("--no-timestamp", is_flag=True, help="Omit the generation time from report.json."),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _config(command, spec_path, out_dir, fmt, tol, no_timestamp, **extra) -> RunConfig:
    return RunConfig(command=command, spec_path=spec_path, out_dir=out_dir, format=fmt,
                     tolerances=_parse_tolerances(tol), timestamp=not no_timestamp, **extra)


def _exit(build):
    try:
        cfg = build()
    except InvalidInput as exc:
        click.echo(f"invalid input: {exc}", err=True)
        sys.exit(EXIT_INVALID)
    sys.exit(run(cfg))


class _InputErrorGroup(click.Group):
    """Usage errors exit with the invalid-input code instead of click's 2."""

    def main(self, *args, **kwargs):
        kwargs["standalone_mode"] = False
        try:
            return super().main(*args, **kwargs)
        except click.exceptions.Exit as exc:
            sys.exit(exc.exit_code)
        except click.UsageError as exc:
            exc.show()
            sys.exit(EXIT_INVALID)
        except click.Abort:
            sys.exit(EXIT_INVALID)


@click.group(cls=_InputErrorGroup)
@click.version_option(package_name="artifact")
def main():
    """Solve and certify Gaussian-extremal information inequalities on grids."""


@main.command("solve")
@_common
def solve_cmd(spec_path, out_dir, fmt, tol, no_timestamp):
    """Solve the problem in --spec and write report.json / density.csv."""
    _exit(lambda: _config("solve", spec_path, out_dir, fmt, tol, no_timestamp))


@main.command("verify")
@_common
@click.option("--density", "density_path", type=click.Path(path_type=Path), required=True,
              help="Density CSV on the problem grid.")
def verify_cmd(spec_path, out_dir, fmt, tol, no_timestamp, density_path):
    """Check a density against the stationarity conditions of --spec."""
    _exit(lambda: _config("verify", spec_path, out_dir, fmt, tol, no_timestamp, density_path=density_path))


@main.command("sweep")
@_common
@click.option("--samples", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--generator", type=click.Choice(["mixture", "tilted", "perturbed_extremal"]),
              default="mixture", show_default=True)
def sweep_cmd(spec_path, out_dir, fmt, tol, no_timestamp, samples, seed, generator):
    """Randomized margin sweep; writes margins.csv."""
    _exit(lambda: _config("sweep", spec_path, out_dir, fmt, tol, no_timestamp,
                          samples=samples, seed=seed, generator=generator))


@main.command("catalog")
@_common
@click.option("--second-moment", "second_moments", type=float, multiple=True, default=(1.0,), show_default=True)
@click.option("--chi-shape", "chi_shapes", type=float, multiple=True, default=(1.0, 3.0, 4.0), show_default=True)
def catalog_cmd(spec_path, out_dir, fmt, tol, no_timestamp, second_moments, chi_shapes):
    """Closed-form entropy and Fisher information of the catalog families."""
    _exit(lambda: _config("catalog", spec_path, out_dir, fmt, tol, no_timestamp,
                          second_moments=tuple(second_moments), chi_shapes=tuple(chi_shapes)))


@main.command("wiretap")
@_common
@click.option("--gain", type=float, default=None)
@click.option("--sigma-w2", type=float, default=None)
@click.option("--sigma-z2", type=float, default=None)
@click.option("--rate", type=float, default=None, help="Target Var(X|Y1).")
def wiretap_cmd(spec_path, out_dir, fmt, tol, no_timestamp, gain, sigma_w2, sigma_z2, rate):
    """MSE-gap extremal for the Gaussian wiretap channel."""

    def build():
        values = (gain, sigma_w2, sigma_z2, rate)
        if all(v is None for v in values):
            params = None
        elif any(v is None for v in values):
            raise InvalidInput("give all of --gain, --sigma-w2, --sigma-z2, --rate or use --spec")
        else:
            params = values
        return _config("wiretap", spec_path, out_dir, fmt, tol, no_timestamp, wiretap=params)

    _exit(build)


if __name__ == "__main__":
    main()
