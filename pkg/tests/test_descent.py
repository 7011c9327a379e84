import math

import numpy as np
import pytest

from lipshape import descent, pde
from lipshape.descent import CSV_COLUMNS, armijo_step, dphi_infinity, read_csv, run, write_csv
from lipshape.direction import steepest_direction
from lipshape.mesh import EmbeddedDomain, deform, holdall_square_domain, refine_domain
from lipshape.problem import tracking_instance
from lipshape.shapecalc import assemble_shape_gradient, evaluate_J

spec = tracking_instance()


@pytest.fixture(scope="module")
def short_run():
    return run(holdall_square_domain(1.0, 4), spec, max_iter=6, hausdorff_h=0.05)


def first_step_inputs(gamma=0.1):
    dom = holdall_square_domain(1.0, 4)
    state = run(dom, spec, gamma=gamma, max_iter=0, hausdorff_h=0)
    om = dom.omega
    grad = assemble_shape_gradient(om, spec, pde.solve(om, spec))
    res = steepest_direction(dom.mesh, dom.scatter(grad.dual_vector), fixed=dom.fixed_vertices)
    return state, res


def test_csv_header():
    assert CSV_COLUMNS == [
        "k", "J", "dual_norm", "t_k", "dPhi_inf", "area", "perimeter",
        "n_triangles", "state_newton_iters", "hausdorff_to_prev",
    ]


def test_stationary_start_returns_immediately():
    st = run(holdall_square_domain(1.0, 4), spec, stop_tol=10.0)
    assert st.status == "tolerance"
    assert st.k == 0 and st.step_history == [] and len(st.rows) == 1


def test_max_iter_zero():
    st = run(holdall_square_domain(1.0, 4), spec, max_iter=0)
    assert st.status == "max_iter" and len(st.rows) == 1
    assert math.isnan(st.rows[0]["t_k"])
    assert st.rows[0]["dPhi_inf"] == 1.0


def test_gamma_range():
    with pytest.raises(ValueError):
        run(holdall_square_domain(1.0, 4), spec, gamma=1.0)
    with pytest.raises(ValueError):
        run(holdall_square_domain(1.0, 4), spec, gamma=0.0)


def test_monotone_descent(short_run):
    J = np.array(short_run.J_history)
    assert short_run.status == "max_iter" and short_run.k == 6
    assert np.all(np.diff(J) < 0)


def test_armijo_inequality_post_hoc(short_run):
    for s in short_run.steps:
        assert s.J_new - s.J_old <= short_run.gamma * s.t * s.slope + 1e-12
        assert s.slope < 0


def test_steps_are_negative_powers_of_two(short_run):
    for t in short_run.step_history:
        e = -math.log2(t)
        assert e == int(e) and 1 <= e <= 30


def test_bi_lipschitz_per_step(short_run):
    for s in short_run.steps:
        assert s.min_det_ratio >= 1.0 - 1e-12
        assert s.max_dv_norm <= 1 + 1e-12


def test_dphi_bounded_by_product(short_run):
    prod = 1.0
    for t, d in zip([0.0] + short_run.step_history, short_run.dPhi_inf_history):
        prod *= 1 + t
        assert d <= prod * (1 + 1e-12)
    assert short_run.dPhi_inf_history[0] == 1.0


def test_composition_consistency(short_run):
    ref = short_run.reference.mesh.vertices
    cur = short_run.domain.mesh.vertices
    assert np.max(np.abs(ref + short_run.displacement - cur)) <= 1e-12


def test_rows_match_histories(short_run):
    rows = short_run.rows
    assert [r["k"] for r in rows] == list(range(len(rows)))
    assert [r["J"] for r in rows] == short_run.J_history
    assert [r["t_k"] for r in rows[:-1]] == short_run.step_history
    assert rows[0]["hausdorff_to_prev"] == 0.0
    assert all(r["hausdorff_to_prev"] >= 0 for r in rows[1:])


def test_csv_round_trip(short_run, tmp_path):
    text = write_csv(short_run, tmp_path / "run.csv")
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    back = read_csv(tmp_path / "run.csv")
    assert len(back) == len(short_run.rows)
    for a, b in zip(back, short_run.rows):
        for c in CSV_COLUMNS:
            assert (math.isnan(a[c]) and math.isnan(b[c])) or a[c] == b[c]


def test_accepts_half_when_inequality_holds_at_half():
    state, res = first_step_inputs()
    moved = deform(state.domain.mesh, res.V, 0.5)
    trial = EmbeddedDomain(moved, state.domain.inside).omega
    J_half = evaluate_J(trial, spec, pde.solve_state(trial, spec))
    holds = J_half - state.J_history[-1] <= state.gamma * 0.5 * (-res.dual_norm_estimate)
    step = armijo_step(state, res, spec)
    assert (step.t == 0.5) == holds
    assert step.J - state.J_history[-1] <= state.gamma * step.t * (-res.dual_norm_estimate)


def test_larger_gamma_never_takes_larger_step():
    lo_state, res = first_step_inputs(gamma=0.01)
    hi_state, _ = first_step_inputs(gamma=0.99)
    assert armijo_step(hi_state, res, spec).t <= armijo_step(lo_state, res, spec).t


def test_armijo_exhaustion_reported():
    state, res = first_step_inputs()
    with pytest.raises(descent.ArmijoError):
        armijo_step(state, res, spec, max_backtracks=0)


def test_armijo_rejects_ascent_direction():
    state, res = first_step_inputs()
    res.dual_norm_estimate = -1.0
    with pytest.raises(descent.ArmijoError):
        armijo_step(state, res, spec)


def test_dphi_after_one_step():
    st = run(holdall_square_domain(1.0, 4), spec, max_iter=1, hausdorff_h=0)
    assert 1.0 <= dphi_infinity(st) <= 1 + st.step_history[0] + 1e-12


def test_refinement_cascade():
    st = run(holdall_square_domain(1.0, 4), spec, max_iter=5, refine_every=2, refine_levels=2, hausdorff_h=0)
    n = [r["n_triangles"] for r in st.rows]
    assert n[:3] == [32, 32, 128] and n[-1] == 128
    assert st.level == 1
    assert np.max(np.abs(st.reference.mesh.vertices + st.displacement - st.domain.mesh.vertices)) <= 1e-12
    assert np.all(np.diff(st.J_history) < 0)


def test_refinement_keeps_dphi():
    st = run(holdall_square_domain(1.0, 4), spec, max_iter=3, hausdorff_h=0)
    before = dphi_infinity(st)
    fine, (disp,) = refine_domain(st.domain, [st.displacement])
    ref, _ = refine_domain(st.reference)
    after = dphi_infinity((ref.mesh, fine.mesh))
    assert after == pytest.approx(before, rel=1e-12)
    assert np.allclose(ref.mesh.vertices + disp, fine.mesh.vertices, atol=1e-12)


def test_degenerate_floor(monkeypatch):
    monkeypatch.setattr(descent, "MIN_ANGLE", math.radians(50.0))
    st = run(holdall_square_domain(1.0, 4), spec, max_iter=5)
    assert st.status == "degenerate" and "angle" in st.message
    assert len(st.rows) == 1 and st.step_history == []


def test_callback_sees_consistent_state():
    seen = []

    def cb(state):
        seen.append((state.mesh.n_vertices, len(state.u)))

    run(holdall_square_domain(1.0, 4), spec, max_iter=2, hausdorff_h=0, callback=cb)
    assert len(seen) == 3 and all(a == b for a, b in seen)

