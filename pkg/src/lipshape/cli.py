"""Command-line experiment runner.

Usage::

    lipshape run <config>     descent run, CSV + VTK + summary in output_dir
    lipshape check <config>   derivative and shape-gradient self-tests
    lipshape mesh <config>    write the initial mesh only

The config file holds ``key = value`` lines; ``#`` starts a comment.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import descent, geomdiag, pde
from .linalg import ConvergenceError
from .mesh import EmbeddedDomain, MeshError, Rectangle, holdall_square_domain, write_mesh, write_vtk
from .problem import ProblemSpec, tracking_instance, verify_derivative_consistency
from .shapecalc import finite_difference_check

log = logging.getLogger("lipshape")

__all__ = ["ConfigError", "RunConfig", "parse_config", "build_problem", "initial_domain", "run_experiment", "main"]

PROBLEMS = {"tracking": tracking_instance}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    problem: str = "tracking"
    half_width: float = 1.0
    subdivisions: int = 16
    holdall_half_width: float = 2.0
    outer_cells: int = 0  # 0: margin cells about as wide as the inner ones
    gamma: float = 0.1
    stop_tol: float = 1e-3
    max_iter: int = 500
    refine_every: int = 15  # 0 disables refinement
    refine_levels: int = 4
    direction_p: int = 8
    inner_tol: float = 1e-8
    newton_tol: float = 1e-10
    max_backtracks: int = 30
    hausdorff_h: float = -1.0  # < 0: diam(D)/512, 0: off
    vtk_stride: int = 1  # 0: no VTK snapshots
    threads: int = 1
    output_dir: str = "lipshape_out"

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem: unknown problem {self.problem!r} (known: {', '.join(PROBLEMS)})")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma: must satisfy gamma in (0,1), got {self.gamma}")
        for name in ("half_width", "holdall_half_width", "stop_tol", "inner_tol", "newton_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name}: must be positive, got {getattr(self, name)}")
        for name in ("subdivisions", "refine_levels", "max_backtracks", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be a positive integer, got {getattr(self, name)}")
        for name in ("max_iter", "refine_every", "vtk_stride", "outer_cells"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be non-negative, got {getattr(self, name)}")
        if self.subdivisions < 2:
            raise ConfigError("subdivisions: must be at least 2")
        if self.direction_p < 2 or self.direction_p % 2:
            raise ConfigError(f"direction_p: must be an even integer >= 2, got {self.direction_p}")
        if self.half_width >= self.holdall_half_width:
            raise ConfigError("half_width: the initial square must lie strictly inside the hold-all square")

    def describe(self) -> str:
        return "\n".join(f"{f.name} = {getattr(self, f.name)}" for f in fields(self))


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str, lineno: int):
    kind = _TYPES[key]
    try:
        if kind == "int":
            value = float(raw)
            if not value.is_integer():
                raise ValueError
            return int(value)
        if kind == "float":
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError
            return value
    except ValueError:
        raise ConfigError(f"line {lineno}: key {key!r}: expected {kind}, got {raw!r}") from None
    return raw


def parse_config_text(text: str) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = (s.strip() for s in line.partition("="))
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: key {key!r} given twice")
        if not raw:
            raise ConfigError(f"line {lineno}: key {key!r} has no value")
        values[key] = _convert(key, raw, lineno)
    return RunConfig(**values)


def parse_config(path) -> RunConfig:
    """Read a ``key = value`` config file; absent keys take the defaults of :class:`RunConfig`."""
    return parse_config_text(Path(path).read_text())


def build_problem(config: RunConfig) -> ProblemSpec:
    return PROBLEMS[config.problem](Rectangle.square(config.holdall_half_width))


def initial_domain(config: RunConfig) -> EmbeddedDomain:
    return holdall_square_domain(
        config.half_width,
        config.subdivisions,
        Rectangle.square(config.holdall_half_width),
        outer_cells=config.outer_cells or None,
    )


def _summary_text(items: dict) -> str:
    out = []
    for key, value in items.items():
        if isinstance(value, float):
            value = repr(value)
        out.append(f"{key}: {value}")
    return "\n".join(out) + "\n"


def run_experiment(config: RunConfig) -> int:
    """Run the descent and write ``iterations.csv``, VTK snapshots and ``summary.txt``.

    Returns the process exit status: 0 for a run that stopped by tolerance,
    iteration budget or the degeneration floor, 1 if a solver aborted.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = build_problem(config)
    domain = initial_domain(config)
    log.info("configuration:\n%s", config.describe())

    last = {}
    visits = [0]

    def snapshot(state):
        last["state"] = state
        i = visits[0]
        visits[0] += 1
        if config.vtk_stride and i % config.vtk_stride == 0:
            om = state.mesh
            write_vtk(om, out / f"omega_{i:04d}.vtk", point_data={"u": state.u}, title=f"iterate {state.k}")

    start = time.perf_counter()
    error = None
    try:
        state = descent.run(
            domain,
            spec,
            gamma=config.gamma,
            stop_tol=config.stop_tol,
            max_iter=config.max_iter,
            refine_every=config.refine_every or None,
            refine_levels=config.refine_levels,
            direction_p=config.direction_p,
            inner_tol=config.inner_tol,
            newton_tol=config.newton_tol,
            max_backtracks=config.max_backtracks,
            hausdorff_h=None if config.hausdorff_h < 0 else config.hausdorff_h,
            callback=snapshot,
        )
    except (ConvergenceError, descent.ArmijoError, pde.AprioriBoundError, MeshError) as exc:
        error = exc
        state = last.get("state")
        if state is None:
            raise
        state.status, state.message = "aborted", f"{type(exc).__name__}: {exc}"
    runtime = time.perf_counter() - start

    descent.write_csv(state, out / "iterations.csv")
    om = state.mesh
    try:
        centroid, radius, cv = geomdiag.circularity(om)
    except MeshError:
        centroid, radius, cv = (math.nan, math.nan), math.nan, math.nan
    dual = state.dualnorm_history[-1] if state.dualnorm_history else math.nan
    summary = {
        "stop_reason": state.status,
        "message": state.message or "-",
        "iterations": state.k,
        "final_J": state.J_history[-1],
        "final_dual_norm": dual,
        "final_area": om.area,
        "initial_area": domain.omega.area,
        "centroid": f"{float(centroid[0])!r} {float(centroid[1])!r}",
        "mean_radius": radius,
        "radius_cv": cv,
        "dPhi_inf": state.dPhi_inf_history[-1],
        "n_triangles": om.n_triangles,
        "runtime_s": runtime,
    }
    (out / "summary.txt").write_text(_summary_text(summary))
    log.info("stop reason %s after %d iterations, J = %.6e, dual norm = %.3e", state.status, state.k, summary["final_J"], dual)
    return 1 if error is not None else 0


def run_checks(config: RunConfig, directions: int = 5) -> int:
    """Pointwise derivative consistency of the problem plus finite-difference shape-gradient checks."""
    spec = build_problem(config)
    report = verify_derivative_consistency(spec)
    ok = report.passed
    print(f"problem derivatives: {'ok' if report.passed else 'FAILED ' + ', '.join(report.failed)}")
    mesh = initial_domain(config).omega
    x = mesh.vertices
    hw = config.half_width
    bump = np.clip(1.0 - np.max(np.abs(x), axis=1) / hw, 0.0, None)
    # every field has a dilation part, so J'[V] does not vanish by symmetry
    one = np.ones(len(x))
    fields_ = [
        np.column_stack([x[:, 0], x[:, 1]]),
        np.column_stack([one + x[:, 0], 0.5 * one + 0.5 * x[:, 1]]),
        np.column_stack([x[:, 1] + 0.3 * x[:, 0], 0.2 * x[:, 1] - x[:, 0]]),
        np.column_stack([(np.sin(x[:, 0]) + 0.5) * bump, np.cos(2 * x[:, 1]) * bump]),
        np.column_stack([x[:, 0] ** 2 + x[:, 0], x[:, 0] * x[:, 1] + x[:, 1]]),
    ][:directions]
    for i, V in enumerate(fields_):
        V = 0.25 * V / max(np.max(np.abs(V)), 1e-300)
        fd = finite_difference_check(mesh, spec, V, newton_tol=config.newton_tol)
        err = fd.relative_error(1e-3)
        good = err < 0.05 and abs(fd.slope - 1.0) <= 0.3
        ok &= good
        print(f"direction {i}: J'[V] = {fd.derivative:.6e}, rel. error(1e-3) = {err:.2e}, slope = {fd.slope:.3f} {'ok' if good else 'FAILED'}")
    return 0 if ok else 1


def write_initial_mesh(config: RunConfig) -> int:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dom = initial_domain(config)
    write_mesh(dom.omega, out / "initial_omega.mesh")
    write_mesh(dom.mesh, out / "initial_holdall.mesh")
    write_vtk(dom.mesh, out / "initial.vtk", cell_data={"inside": dom.inside.astype(float)}, title="initial mesh")
    print(f"omega: {dom.omega.n_vertices} vertices, {dom.omega.n_triangles} triangles")
    print(f"hold-all: {dom.mesh.n_vertices} vertices, {dom.mesh.n_triangles} triangles")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lipshape", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    parser.add_argument("command", choices=["run", "check", "mesh"])
    parser.add_argument("config", help="path to a key = value config file")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    if not args.verbose:
        for name in ("descent", "direction", "pde"):
            logging.getLogger(f"lipshape.{name}").setLevel(logging.WARNING)
    try:
        config = parse_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"lipshape: {exc}", file=sys.stderr)
        return 2
    if args.command == "run":
        return run_experiment(config)
    if args.command == "check":
        return run_checks(config)
    return write_initial_mesh(config)


if __name__ == "__main__":
    sys.exit(main())
