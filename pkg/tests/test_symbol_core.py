import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dirac_edge import symbol_core as sc
from dirac_edge.errors import EvaluationError, GapCollapseError, NotFoundError, PreconditionError


def brute_bracket(f, g, z, step=1e-5):
    """{f, g} = sum d_xi f d_x g - d_x f d_xi g by central differences of scalar functions."""
    def grad(fun):
        out = np.zeros(4)
        for k in range(4):
            e = np.zeros(4)
            e[k] = step
            out[k] = (fun(z + e) - fun(z - e)) / (2 * step)
        return out
    gf, gg = grad(f), grad(g)
    return gf[2:] @ gg[:2] - gf[:2] @ gg[2:]


def brute_M(sym, z):
    p = [lambda w, j=j: sym(w)[j] for j in range(3)]
    return np.array([brute_bracket(p[1], p[2], z), brute_bracket(p[2], p[0], z), brute_bracket(p[0], p[1], z)])


def smooth_symbol(C, D):
    """p = C z + D sin(z) with analytic gradient."""
    C, D = np.asarray(C), np.asarray(D)

    def p(z):
        return np.tensordot(C, z, axes=(1, 0)) + np.tensordot(D, np.sin(z), axes=(1, 0))

    def grad(z):
        return C.reshape(3, 4, *([1] * (z.ndim - 1))) + D.reshape(3, 4, *([1] * (z.ndim - 1))) * np.cos(z)[None]

    return sc.DiracSymbol(p, grad)


coef = st.floats(-2, 2, allow_nan=False)
mat34 = st.lists(coef, min_size=12, max_size=12).map(lambda v: np.array(v).reshape(3, 4))
point = st.lists(st.floats(-3, 3, allow_nan=False), min_size=4, max_size=4).map(np.array)


# eval_symbol -----------------------------------------------------------------

def test_domain_wall_vanishes_on_interface():
    h = sc.eval_symbol(sc.domain_wall("x2"), [0, 0, 0, 0])
    assert np.allclose(h.vector(), 0) and h.d == 0


def test_domain_wall_mass_component():
    h = sc.eval_symbol(sc.domain_wall("x2"), [0, 1, 0, 0])
    assert np.allclose(h.vector(), [0, 0, 1])


def test_magnetic_without_potential_is_domain_wall(rng):
    a, b = sc.magnetic("x2 + 0.1*x1**2"), sc.domain_wall("x2 + 0.1*x1**2")
    for z in rng.standard_normal((10, 4)):
        assert np.allclose(a(z), b(z))


def test_nonfinite_evaluation_raises():
    sym = sc.custom(["xi1", "xi2", "exp(x2)"])
    with pytest.raises(EvaluationError):
        sym([0, 1e4, 0, 0])


def test_hermitian2_matrix_and_trace():
    h = sc.Hermitian2(1.0, -2.0, 0.5, 0.0)
    m = h.matrix()
    assert np.allclose(m, m.conj().T)
    assert abs(np.trace(m)) < 1e-15
    assert abs(np.trace(sc.Hermitian2(1, 0, 0, 2.0).matrix()) - 4) < 1e-15


# poisson_matrix / lambda_gap ---------------------------------------------------

def test_domain_wall_M_is_sigma1(rng):
    sym = sc.domain_wall("x2")
    for z in rng.standard_normal((5, 4)):
        assert np.allclose(sc.poisson_vector(sym, z), [1, 0, 0], atol=1e-14)


def test_domain_wall_M_general_gradient():
    # grad m = (a, b) gives M = b s1 - a s2
    sym = sc.domain_wall("0.3*x1 + 2*x2")
    assert np.allclose(sc.poisson_vector(sym, [0.1, 0.2, 0.3, 0.4]), [2, -0.3, 0])


def test_magnetic_M():
    for B in (1.0, 2.0, -0.5):
        M = sc.poisson_vector(sc.magnetic("x2", B=B), [0.3, 0.0, 0.1, 0.0])
        assert np.allclose(M, [1, 0, -B], atol=1e-14)


def test_linear_symbol_M_matches_brute_force():
    C = [[0, 0, 1, 0], [0, 0, 0, 1], [0, 1, 0, 0]]
    sym = sc.linear_symbol(C)
    z = np.array([0.2, -0.1, 0.3, 0.7])
    M = sc.poisson_vector(sym, z)
    assert np.allclose(M, brute_M(sym, z), atol=1e-8)
    assert np.allclose(M, [1, 0, 0])
    assert abs(sc.lambda_gap(sym, z) - 1) < 1e-14


def test_lambda_values():
    assert abs(sc.lambda_gap(sc.domain_wall("x2"), [0, 0, 0, 0]) - 1) < 1e-14
    assert abs(sc.lambda_gap(sc.domain_wall("3*x2"), [0, 0, 0, 0]) - np.sqrt(3)) < 1e-14
    assert abs(sc.lambda_gap(sc.magnetic("x2", B=1.0), [0, 0, 0, 0]) - 2 ** 0.25) < 1e-14


def test_lambda_scales_linearly(rng):
    sym = smooth_symbol(rng.standard_normal((3, 4)), 0.3 * rng.standard_normal((3, 4)))
    z = rng.standard_normal(4)
    assert abs(sc.lambda_gap(sym.scaled(2.0), z) - 2 * sc.lambda_gap(sym, z)) < 1e-12


# eigenlines -------------------------------------------------------------------

def test_eigenlines_sigma3():
    # p = (xi1, x1, x2 + xi2) has M = s3
    sym = sc.linear_symbol([[0, 0, 1, 0], [1, 0, 0, 0], [0, 1, 0, 1]])
    assert np.allclose(sc.poisson_vector(sym, np.zeros(4)), [0, 0, 1])
    lm, lp = sc.eigenlines(sym, np.zeros(4))
    assert np.allclose(lm.v, [0, 1]) and np.allclose(lp.v, [1, 0])


def test_eigenlines_sigma1():
    lm, lp = sc.eigenlines(sc.domain_wall("x2"), np.zeros(4))
    assert np.allclose(lm.v, np.array([1, -1]) / np.sqrt(2))
    assert np.allclose(lp.v, np.array([1, 1]) / np.sqrt(2))
    assert lm.sign == -1 and lp.sign == 1


def test_eigenlines_general_wall_match_eigendecomposition():
    sym = sc.domain_wall("0.6*x1 + 0.8*x2")
    z = np.zeros(4)
    M = sc.pauli_matrix(sc.poisson_vector(sym, z))
    lm, lp = sc.eigenlines(sym, z)
    assert np.allclose(M @ lm.v, -lm.v) and np.allclose(M @ lp.v, lp.v)
    assert lm.v[0].real > 0 and abs(lm.v[0].imag) < 1e-15


def test_eigenlines_gap_collapse():
    with pytest.raises(GapCollapseError):
        sc.eigenlines(sc.domain_wall("x2**2"), np.zeros(4))


# hamiltonian_field / edge_vector_field -------------------------------------------

def test_hamiltonian_field_domain_wall():
    sym = sc.domain_wall("0.5*x1 + x2")
    H = sc.hamiltonian_field(sym, np.zeros(4))
    assert np.allclose(H[0].vector(), [1, 0, 0]) and np.allclose(H[1].vector(), [0, 1, 0])
    assert np.allclose(H[2].vector(), [0, 0, -0.5]) and np.allclose(H[3].vector(), [0, 0, -1])


def test_hamiltonian_field_zero_symbol():
    zero = sc.custom(["0", "0", "0"])
    assert all(np.allclose(h.vector(), 0) for h in sc.hamiltonian_field(zero, np.ones(4)))


def test_hamiltonian_field_fd_cross_check(rng):
    sym = smooth_symbol(rng.standard_normal((3, 4)), rng.standard_normal((3, 4)))
    for z in rng.standard_normal((5, 4)):
        a = sc.hamiltonian_field_vectors(sym.grad(z))
        b = sc.hamiltonian_field_vectors(sym.fd_grad(z))
        assert np.max(np.abs(a - b)) < 1e-6


def test_edge_vector_straight_wall():
    V = sc.edge_vector_field(sc.domain_wall("x2"), np.zeros(4))
    assert np.allclose(V, [-1, 0, 0, 0], atol=1e-15)


def test_edge_vector_circle_counterclockwise():
    V = sc.edge_vector_field(sc.domain_wall("x1**2 + x2**2 - 1"), [1, 0, 0, 0])
    assert np.allclose(V[:2], [0, 1], atol=1e-14)


def test_edge_vector_rotated_gradient():
    # projection equals grad m^perp / |grad m|, perp the counterclockwise rotation
    for a, b in [(0.3, 1.0), (-2.0, 0.5), (1.0, 0.0)]:
        sym = sc.domain_wall(f"{a}*x1 + {b}*x2")
        V = sc.edge_vector_field(sym, np.zeros(4))
        perp = np.array([-b, a]) / np.hypot(a, b)
        assert np.allclose(V[:2], perp)
        assert np.allclose(V[2:], 0)


def test_edge_vector_magnetic_speed():
    V = sc.edge_vector_field(sc.magnetic("x2", B=1.0), np.zeros(4))
    assert abs(np.linalg.norm(V[:2]) - 1 / np.sqrt(2)) < 1e-14


# find_crossing / transversality ------------------------------------------------------

def test_find_crossing_domain_wall():
    z = sc.find_crossing(sc.domain_wall("x2"), [0.3, 0.2, 0.1, -0.1])
    assert abs(z[1]) < 1e-11 and np.allclose(z[2:], 0, atol=1e-11)


def test_find_crossing_already_on_gamma():
    z0 = np.array([0.7, 0.0, 0.0, 0.0])
    z, it = sc.find_crossing(sc.domain_wall("x2"), z0, return_info=True)
    assert it == 0 and np.array_equal(z, z0)


def test_find_crossing_shifted_momentum():
    sym = sc.custom(["xi1 - 0.5*x2", "xi2 - 0.2", "x2 - 0.1*x1"])
    z = sc.find_crossing(sym, [0.4, 0.0, 0.0, 0.0])
    assert np.max(np.abs(sym(z))) < 1e-11
    assert abs(z[1] - 0.1 * z[0]) < 1e-11 and abs(z[2] - 0.5 * z[1]) < 1e-11 and abs(z[3] - 0.2) < 1e-11


def test_find_crossing_failure():
    with pytest.raises(NotFoundError):
        sc.find_crossing(sc.custom(["xi1", "xi2", "x2**2 + 1"]), [0, 1, 0, 0])


def test_transversality():
    rep = sc.check_transversality(sc.domain_wall("0.5*x2"), np.zeros(4))
    assert rep["independent"] and abs(rep["min_singular_value"] - 0.5) < 1e-14
    rep = sc.check_transversality(sc.domain_wall("x2**2"), np.zeros(4))
    assert not rep["independent"]
    with pytest.raises(PreconditionError):
        sc.check_transversality(sc.domain_wall("x2"), [0, 1, 0, 0])


def test_transversality_linear(rng):
    for _ in range(10):
        C = rng.standard_normal((3, 4))
        sym = sc.linear_symbol(C)
        rep = sc.check_transversality(sym, np.zeros(4))
        assert rep["independent"]
        assert abs(rep["lambda"] - sc.lambda_gap(sym, rng.standard_normal(4))) < 1e-12


# properties -------------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(mat34, mat34, point)
def test_eigenvalues_of_symbol(C, D, z):
    sym = smooth_symbol(C, D)
    p = sym(z)
    w = np.linalg.eigvalsh(sc.eval_symbol(sym, z).matrix())
    r = np.linalg.norm(p)
    assert np.allclose(w, [-r, r], atol=1e-12 * max(1, r))


@settings(max_examples=60, deadline=None)
@given(mat34, mat34, point)
def test_poisson_matrix_spectrum(C, D, z):
    sym = smooth_symbol(C, D)
    M = sc.poisson_matrix(sym, z).matrix()
    assert np.allclose(M, M.conj().T) and abs(np.trace(M)) < 1e-12
    lam2 = sc.lambda_gap(sym, z) ** 2
    w = np.linalg.eigvalsh(M)
    assert np.allclose(w, [-lam2, lam2], atol=1e-10 * max(1, lam2))


@settings(max_examples=40, deadline=None)
@given(mat34, point)
def test_edge_vector_tangent_to_gamma(C, z):
    sym = sc.linear_symbol(C)
    if sc.lambda_gap(sym, z) < 1e-2 or np.linalg.svd(C, compute_uv=False)[-1] < 1e-3:
        return
    # project onto ker C, which is Gamma for a linear symbol
    k = np.linalg.svd(C)[2][-1]
    zg = (k @ z) * k
    V = sc.edge_vector_field(sym, zg)
    assert np.max(np.abs(sym.grad(zg) @ V)) < 1e-6 * max(1, np.linalg.norm(V))


@settings(max_examples=30, deadline=None)
@given(mat34, mat34, point)
def test_edge_vector_tangent_nonlinear(C, D, z):
    sym = smooth_symbol(C, 0.2 * D)
    try:
        zg = sc.find_crossing(sym, z)
        lam = sc.lambda_gap(sym, zg)
    except (NotFoundError, EvaluationError):
        return
    if lam < 1e-1:
        return
    V = sc.edge_vector_field(sym, zg)
    assert np.max(np.abs(sym.grad(zg) @ V)) < 1e-6 * max(1, np.linalg.norm(V))


@settings(max_examples=30, deadline=None)
@given(mat34, mat34, point)
def test_fd_gradient_second_order(C, D, z):
    sym = smooth_symbol(C, D)
    exact = sym.grad(z)
    e1 = np.max(np.abs(sym.fd_grad(z, 1e-2) - exact))
    e2 = np.max(np.abs(sym.fd_grad(z, 5e-3) - exact))
    if e1 > 1e-8:
        assert 3.0 < e1 / e2 < 5.0


@settings(max_examples=60, deadline=None)
@given(mat34, mat34, point)
def test_eigenlines_orthonormal(C, D, z):
    sym = smooth_symbol(C, D)
    if sc.lambda_gap(sym, z) < 1e-3:
        return
    lm, lp = sc.eigenlines(sym, z)
    M = sc.pauli_matrix(sc.poisson_vector(sym, z))
    lam2 = sc.lambda_gap(sym, z) ** 2
    assert abs(np.vdot(lm.v, lp.v)) < 1e-10
    assert abs(np.linalg.norm(lm.v) - 1) < 1e-12
    assert np.allclose(M @ lm.v, -lam2 * lm.v, atol=1e-10 * max(1, lam2))
    assert np.allclose(M @ lp.v, lam2 * lp.v, atol=1e-10 * max(1, lam2))


def test_expression_symbol_gradient_matches_fd(rng):
    sym = sc.custom(["xi1*cos(x2) - 0.3*x1", "xi2 + tanh(x1)", "x2 - 0.2*sin(x1)*exp(-xi1**2)"])
    for z in rng.standard_normal((5, 4)):
        assert np.max(np.abs(sym.grad(z) - sym.fd_grad(z))) < 1e-8
