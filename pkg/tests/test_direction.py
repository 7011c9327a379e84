import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lipshape import pde
from lipshape.direction import spectral_norm_2x2, spectral_norms, steepest_direction
from lipshape.mesh import element_gradients, holdall_square_domain, strip_mesh
from lipshape.mesh import _barycentric_gradients
from lipshape.problem import tracking_instance
from lipshape.shapecalc import assemble_shape_gradient

spec = tracking_instance()


@pytest.fixture(scope="module")
def problem():
    dom = holdall_square_domain(1.0, 8)
    om = dom.omega
    grad = assemble_shape_gradient(om, spec, pde.solve(om, spec))
    return dom, dom.scatter(grad.dual_vector)


@pytest.fixture(scope="module")
def direction(problem):
    dom, ell = problem
    return steepest_direction(dom.mesh, ell, fixed=dom.fixed_vertices)


def test_spectral_norm_examples():
    assert spectral_norm_2x2(np.eye(2)) == 1.0
    assert spectral_norm_2x2(np.diag([3.0, -5.0])) == pytest.approx(5.0, abs=1e-15)
    assert spectral_norm_2x2(np.zeros((2, 2))) == 0.0


def test_spectral_norm_random_against_eigen_oracle():
    rng = np.random.default_rng(11)
    A = rng.normal(size=(1000, 2, 2))
    ata = np.einsum("tki,tkj->tij", A, A)
    # largest root of the characteristic polynomial of A^T A
    tr = ata[:, 0, 0] + ata[:, 1, 1]
    det = ata[:, 0, 0] * ata[:, 1, 1] - ata[:, 0, 1] * ata[:, 1, 0]
    oracle = np.sqrt(tr / 2 + np.sqrt(np.maximum(tr**2 / 4 - det, 0)))
    assert np.max(np.abs(spectral_norms(A) - oracle) / oracle) < 1e-12


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 2), elements=st.floats(-1e3, 1e3)))
def test_spectral_norm_matches_svd(A):
    assert spectral_norm_2x2(A) == pytest.approx(np.linalg.norm(A, 2), rel=1e-12, abs=1e-12)


def test_zero_gradient_gives_zero_field(problem):
    dom, ell = problem
    res = steepest_direction(dom.mesh, np.zeros_like(ell), fixed=dom.fixed_vertices)
    assert np.array_equal(res.V, np.zeros_like(ell))
    assert res.dual_norm_estimate == 0.0 and res.max_spectral_norm == 0.0


def test_result_invariants(problem, direction):
    dom, ell = problem
    norms = spectral_norms(element_gradients(dom.mesh, direction.V))
    assert norms.max() <= 1 + 1e-12
    assert direction.max_spectral_norm == pytest.approx(1.0, abs=1e-12)
    assert np.sum(ell * direction.V) <= 0
    assert direction.dual_norm_estimate == pytest.approx(-np.sum(ell * direction.V), rel=1e-14)
    assert direction.dual_norm_estimate > 0
    assert np.all(direction.V[dom.fixed_vertices] == 0.0)
    assert direction.p_used == 8


def test_scaling_invariance(problem, direction):
    dom, ell = problem
    scaled = steepest_direction(dom.mesh, 10 * ell, fixed=dom.fixed_vertices)
    assert np.max(np.abs(scaled.V - direction.V)) <= 1e-8
    assert scaled.dual_norm_estimate == pytest.approx(10 * direction.dual_norm_estimate, rel=1e-8)


def test_lower_bound_against_random_admissible_fields(problem, direction):
    dom, ell = problem
    rng = np.random.default_rng(2024)
    x = dom.mesh.vertices
    best = np.sum(ell * direction.V)
    for i in range(100):
        if i % 2:
            W = rng.normal(size=x.shape)
        else:  # smooth random fields
            k = rng.normal(size=(2, 2, 2))
            W = np.column_stack([np.sin(x @ k[0, 0]) + np.cos(x @ k[0, 1]), np.sin(x @ k[1, 0]) * np.cos(x @ k[1, 1])])
        W[dom.fixed_vertices] = 0.0
        W /= spectral_norms(element_gradients(dom.mesh, W)).max()
        assert np.sum(ell * W) >= best


def test_monotone_in_p(problem):
    dom, ell = problem
    est = [steepest_direction(dom.mesh, ell, p=p, fixed=dom.fixed_vertices).dual_norm_estimate for p in (4, 8, 16)]
    print("dual norm estimate for p = 4, 8, 16:", est)
    if not (est[0] <= est[1] <= est[2]):
        warnings.warn(f"dual norm estimate not monotone in p: {est}")


def test_strip_bang_bang():
    m = strip_mesh(4.0, 0.25, 32, 2)
    # l(W) = -int d1 W1: the minimizer under |DW| <= 1 with W = 0 at x = 0 is W1 = x
    G = _barycentric_gradients(m.vertices, m.triangles)
    ell = np.zeros((m.n_vertices, 2))
    ell[:, 0] = -np.bincount(m.triangles.ravel(), (m.areas[:, None] * G[:, :, 0]).ravel(), minlength=m.n_vertices)
    fixed = np.flatnonzero(m.vertices[:, 0] == 0.0)
    res = steepest_direction(m, ell, fixed=fixed)
    norms = spectral_norms(element_gradients(m, res.V))
    assert np.mean(norms > 1 - 1e-3) >= 0.95
    assert res.dual_norm_estimate == pytest.approx(m.area, rel=1e-3)


def test_warm_start_agrees_with_cold_start(problem, direction):
    dom, ell = problem
    warm = steepest_direction(dom.mesh, ell, fixed=dom.fixed_vertices, warm_start=0.3 * direction.V + 0.01)
    assert warm.dual_norm_estimate == pytest.approx(direction.dual_norm_estimate, rel=1e-6)


def test_deterministic(problem, direction):
    dom, ell = problem
    again = steepest_direction(dom.mesh, ell, fixed=dom.fixed_vertices)
    assert np.array_equal(again.V, direction.V)


def test_default_fixed_set_is_holdall_boundary(problem, direction):
    dom, ell = problem
    res = steepest_direction(dom.mesh, ell)
    assert np.array_equal(res.V, direction.V)


def test_argument_errors(problem):
    dom, ell = problem
    with pytest.raises(ValueError, match="no fixed"):
        steepest_direction(dom.mesh, ell, fixed=np.array([], dtype=int))
    with pytest.raises(ValueError):
        steepest_direction(dom.mesh, ell, p=5)
    with pytest.raises(ValueError):
        steepest_direction(dom.mesh, ell[:-1])
