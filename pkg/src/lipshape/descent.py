"""Steepest descent with Armijo backtracking over the shapes ``Omega^k = Phi^k(Omega^0)``.

Shapes are :class:`~lipshape.mesh.EmbeddedDomain` values: the hold-all mesh
keeps its connectivity, so ``Phi^k`` is the P1 map sending reference vertex
positions to current ones and ``|DPhi^k|`` is exact per element.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import geomdiag, pde
from .direction import DirectionResult, spectral_norms, steepest_direction
from .mesh import EmbeddedDomain, MeshError, deform, element_gradients, min_angles, refine_domain
from .problem import ProblemSpec
from .shapecalc import assemble_shape_gradient, evaluate_J

log = logging.getLogger(__name__)

__all__ = [
    "CSV_COLUMNS",
    "DescentState",
    "StepRecord",
    "ArmijoResult",
    "ArmijoError",
    "armijo_step",
    "run",
    "dphi_infinity",
    "write_csv",
    "read_csv",
]

CSV_COLUMNS = [
    "k",
    "J",
    "dual_norm",
    "t_k",
    "dPhi_inf",
    "area",
    "perimeter",
    "n_triangles",
    "state_newton_iters",
    "hausdorff_to_prev",
]

MIN_AREA_FACTOR = 1e-6
MIN_ANGLE = math.radians(1.0)


class ArmijoError(RuntimeError):
    pass


@dataclass
class StepRecord:
    """Post-hoc evidence for one accepted step."""

    k: int
    t: float
    backtracks: int
    J_old: float
    J_new: float
    slope: float  # J'(Omega^k)[V^k]
    min_det_ratio: float  # min_T det(I + t DV) / (1 - t)^2
    max_dv_norm: float

    @property
    def armijo_gap(self) -> float:
        """``J_new - J_old - gamma t J'[V]`` is <= 0 for an accepted step (gamma applied by caller)."""
        return self.J_new - self.J_old


@dataclass
class DescentState:
    domain: EmbeddedDomain
    reference: EmbeddedDomain
    gamma: float = 0.1
    stop_tol: float = 1e-3
    k: int = 0
    level: int = 0
    J_history: list = field(default_factory=list)
    dualnorm_history: list = field(default_factory=list)
    step_history: list = field(default_factory=list)
    dPhi_inf_history: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    displacement: np.ndarray | None = None
    u: np.ndarray | None = None
    direction: np.ndarray | None = None
    status: str = "running"
    message: str = ""

    @property
    def mesh(self):
        return self.domain.omega

    @property
    def reference_mesh(self):
        return self.reference.omega

    def product_bound(self) -> float:
        return float(np.prod([1.0 + t for t in self.step_history])) if self.step_history else 1.0


def dphi_infinity(state_or_pair) -> float:
    """``max_T |DPhi_T|_2`` for the P1 map from the reference to the current hold-all mesh."""
    if isinstance(state_or_pair, DescentState):
        ref, cur = state_or_pair.reference.mesh, state_or_pair.domain.mesh
    else:
        ref, cur = state_or_pair
    return float(spectral_norms(element_gradients(ref, cur.vertices)).max())


@dataclass
class ArmijoResult:
    t: float
    domain: EmbeddedDomain
    J: float
    u: np.ndarray
    backtracks: int
    min_det_ratio: float


def armijo_step(
    state: DescentState,
    direction: DirectionResult,
    spec: ProblemSpec,
    max_backtracks: int = 30,
    newton_tol: float = pde.DEFAULT_NEWTON_TOL,
) -> ArmijoResult:
    """Largest ``t in {1/2, 1/4, ...}`` with ``J(Omega_t) - J(Omega) <= gamma t J'[V]``."""
    slope = -direction.dual_norm_estimate
    if not slope < 0:
        raise ArmijoError("direction is not a descent direction")
    J_old = state.J_history[-1]
    mesh = state.domain.mesh
    t = 0.5
    for i in range(max_backtracks):
        moved = deform(mesh, direction.V, t)
        trial = EmbeddedDomain(moved, state.domain.inside)
        u = pde.solve_state(trial.omega, spec, newton_tol, u0=state.u)
        J_new = evaluate_J(trial.omega, spec, u)
        if J_new - J_old <= state.gamma * t * slope:
            ratio = float(np.min(moved.areas / mesh.areas)) / (1.0 - t) ** 2
            return ArmijoResult(t, trial, J_new, u, i, ratio)
        t *= 0.5
    raise ArmijoError(f"no Armijo step after {max_backtracks} backtracks")


def run(
    initial: EmbeddedDomain,
    spec: ProblemSpec,
    gamma: float = 0.1,
    stop_tol: float = 1e-3,
    max_iter: int = 500,
    refine_every: int | None = None,
    refine_levels: int = 1,
    direction_p: int = 8,
    inner_tol: float = 1e-8,
    newton_tol: float = pde.DEFAULT_NEWTON_TOL,
    max_backtracks: int = 30,
    hausdorff_h: float | None = None,
    callback=None,
) -> DescentState:
    """Run the descent loop from ``initial``.

    Stops with ``status`` ``"tolerance"`` (dual norm estimate <= ``stop_tol``),
    ``"max_iter"`` or ``"degenerate"`` (mesh quality floor).  With
    ``refine_every`` set, the current and reference meshes are refined
    congruently after every ``refine_every`` iterations, up to
    ``refine_levels`` levels in total.  ``hausdorff_h = 0`` disables the
    per-iteration Hausdorff diagnostic; ``None`` uses ``diam(D)/512``.
    ``callback(state)`` is called once per visited shape, right after its
    state solve (``state.mesh`` and ``state.u`` then belong together).
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if stop_tol <= 0:
        raise ValueError("stop_tol must be positive")
    state = DescentState(initial, initial, gamma, stop_tol)
    state.displacement = np.zeros_like(initial.mesh.vertices)
    sup = pde.apriori_bound(spec)
    if hausdorff_h is None:
        hausdorff_h = spec.holdall.diameter / 512
    level_min_area = float(initial.mesh.areas.min())
    prev_omega = None
    u_full = None  # state on the hold-all vertices, used as Newton warm start

    while True:
        k = state.k
        dom = state.domain
        om = dom.omega
        u0 = None if u_full is None else u_full[dom.omega_vertex_ids]
        row = {c: math.nan for c in CSV_COLUMNS}
        row.update(
            k=k,
            t_k=math.nan,
            dPhi_inf=dphi_infinity(state),
            area=om.area,
            perimeter=om.perimeter,
            n_triangles=om.n_triangles,
        )
        if prev_omega is not None and hausdorff_h > 0:
            row["hausdorff_to_prev"] = geomdiag.hausdorff_complementary(prev_omega, om, hausdorff_h)
        elif prev_omega is None:
            row["hausdorff_to_prev"] = 0.0

        degenerate = _degenerate(dom, level_min_area)
        sol = pde.solve(om, spec, newton_tol, u0=u0, sup_bound=sup)
        state.u = sol.u
        grad = assemble_shape_gradient(om, spec, sol)
        state.J_history.append(grad.J_value)
        state.dPhi_inf_history.append(row["dPhi_inf"])
        row.update(J=grad.J_value, state_newton_iters=sol.newton_iterations)
        # filled in below; appended now so an aborted step still leaves its row
        state.rows.append(row)
        if callback is not None:
            callback(state)
        if degenerate:
            state.status, state.message = "degenerate", degenerate
            break

        res = steepest_direction(
            dom.mesh,
            dom.scatter(grad.dual_vector),
            p=direction_p,
            inner_tol=inner_tol,
            fixed=dom.fixed_vertices,
            warm_start=state.direction,
        )
        state.direction = res.V
        state.dualnorm_history.append(res.dual_norm_estimate)
        row["dual_norm"] = res.dual_norm_estimate
        if res.dual_norm_estimate <= stop_tol:
            state.status = "tolerance"
            break
        if k >= max_iter:
            state.status = "max_iter"
            break

        step = armijo_step(state, res, spec, max_backtracks, newton_tol)
        row["t_k"] = step.t
        dv = spectral_norms(element_gradients(dom.mesh, res.V))
        state.steps.append(
            StepRecord(k, step.t, step.backtracks, grad.J_value, step.J, -res.dual_norm_estimate, step.min_det_ratio, float(dv.max()))
        )
        state.step_history.append(step.t)
        state.displacement = state.displacement + step.t * res.V
        state.domain = step.domain
        u_full = dom.scatter(step.u)
        prev_omega = om
        state.k += 1
        log.info(
            "k=%d J=%.6e dual=%.3e t=%.4g dPhi=%.4f area=%.4f",
            k, grad.J_value, res.dual_norm_estimate, step.t, row["dPhi_inf"], om.area,
        )

        if refine_every and state.k % refine_every == 0 and state.level + 1 < refine_levels:
            state.domain, (state.displacement, state.direction, u_full) = refine_domain(
                state.domain, [state.displacement, state.direction, u_full]
            )
            state.reference, _ = refine_domain(state.reference)
            prev_omega = None if hausdorff_h <= 0 else prev_omega
            state.level += 1
            level_min_area = float(state.reference.mesh.areas.min())
    return state


def _degenerate(domain: EmbeddedDomain, level_min_area: float) -> str:
    mesh = domain.mesh
    amin = float(mesh.areas.min())
    if amin < MIN_AREA_FACTOR * level_min_area:
        return f"min triangle area {amin:.3e} below {MIN_AREA_FACTOR:g} x initial"
    angle = float(min_angles(mesh).min())
    if angle < MIN_ANGLE:
        return f"min angle {math.degrees(angle):.3f} deg below 1 deg"
    if not np.any(domain.inside):
        return "empty domain"
    return ""


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return ""
    return repr(value)


def write_csv(state: DescentState, path=None) -> str:
    """Per-iteration table with header ``CSV_COLUMNS``; returns the text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in state.rows:
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def read_csv(path_or_text) -> list[dict]:
    text = path_or_text
    if "\n" not in str(path_or_text):
        with open(path_or_text) as fh:
            text = fh.read()
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    out = []
    for rec in reader:
        row = {}
        for c in CSV_COLUMNS:
            v = rec[c]
            if c in ("k", "n_triangles", "state_newton_iters"):
                row[c] = int(v)
            else:
                row[c] = float(v) if v != "" else math.nan
        out.append(row)
    return out
