"""Pointwise geometry of 2x2 traceless Hermitian symbols on R^4.

A symbol is d(x, xi) = p1 s1 + p2 s2 + p3 s3 with real p_j. Phase-space
points are 4-vectors z = (x1, x2, xi1, xi2). The Poisson bracket is

    {f, g} = sum_j d_xi_j f d_x_j g - d_x_j f d_xi_j g.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError, GapCollapseError, NotFoundError, PreconditionError
from .expr import Expression

SIGMA = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)

PHASE_VARS = ("x1", "x2", "xi1", "xi2")
GAP_TOL = 1e-10

# symplectic matrix in (x, xi) ordering; {a.z, b.z} = b^T J a
J4 = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])


@dataclass(frozen=True)
class PhasePoint:
    x: tuple
    xi: tuple

    def as_array(self):
        return np.array([*self.x, *self.xi], dtype=float)


@dataclass(frozen=True)
class Hermitian2:
    """a s1 + b s2 + c s3 + d Id."""

    a: float
    b: float
    c: float
    d: float = 0.0

    def matrix(self):
        return self.a * SIGMA[0] + self.b * SIGMA[1] + self.c * SIGMA[2] + self.d * np.eye(2)

    def vector(self):
        return np.array([self.a, self.b, self.c])

    @classmethod
    def from_vector(cls, v, d=0.0):
        return cls(float(v[0]), float(v[1]), float(v[2]), float(d))


@dataclass(frozen=True)
class EigenLine:
    v: np.ndarray
    sign: int
    z: np.ndarray


def as_z(z):
    if isinstance(z, PhasePoint):
        return z.as_array()
    return np.asarray(z, dtype=float)


def pauli_matrix(vec):
    """s . vec for a Pauli 3-vector (trailing axes broadcast)."""
    vec = np.asarray(vec)
    return np.einsum("k...,kij->...ij", vec.astype(complex), SIGMA)


def pauli_vector(mat):
    """Inverse of pauli_matrix for traceless Hermitian input."""
    mat = np.asarray(mat)
    return np.real(np.einsum("kji,...ij->k...", SIGMA, mat)) / 2


def phase_normalize(v, tol=1e-12):
    """First component with modulus above tol made real positive."""
    v = np.asarray(v, dtype=complex)
    v = v / np.linalg.norm(v)
    for comp in v:
        if abs(comp) > tol:
            return v * (abs(comp) / comp)
    return v


class DiracSymbol:
    """Three real phase-space functions p_j with gradients.

    Parameters
    ----------
    p : callable
        Maps z of shape (4, ...) to an array of shape (3, ...).
    grad : callable, optional
        Maps z to an array of shape (3, 4, ...). If omitted, central
        differences with step 1e-5 * max(1, |z|) are used.
    kind : str
    params : dict
        Model data kept for reporting and for the PDE solver.
    """

    def __init__(self, p, grad=None, kind="custom", params=None):
        self._p = p
        self._grad = grad
        self.kind = kind
        self.params = dict(params or {})

    def __call__(self, z):
        z = as_z(z)
        val = np.asarray(self._p(z), dtype=float)
        if not np.all(np.isfinite(val)):
            raise EvaluationError(f"non-finite symbol value at z={z.tolist()}")
        return val

    @property
    def has_analytic_gradient(self):
        return self._grad is not None

    def grad(self, z):
        z = as_z(z)
        if self._grad is not None:
            g = np.asarray(self._grad(z), dtype=float)
        else:
            g = self.fd_grad(z)
        if not np.all(np.isfinite(g)):
            raise EvaluationError(f"non-finite symbol gradient at z={z.tolist()}")
        return g

    def fd_grad(self, z, step=None):
        z = as_z(z)
        if step is None:
            step = 1e-5 * max(1.0, float(np.max(np.abs(z))))
        cols = []
        for k in range(4):
            e = np.zeros_like(z)
            e[k] = step
            cols.append((np.asarray(self._p(z + e)) - np.asarray(self._p(z - e))) / (2 * step))
        return np.stack(cols, axis=1)

    def scaled(self, c):
        p, g = self._p, self._grad
        return DiracSymbol(lambda z: c * np.asarray(p(z)),
                           None if g is None else (lambda z: c * np.asarray(g(z))),
                           kind=self.kind, params={**self.params, "scale": c})


def _expr_symbol(sources, kind, params, consts=None):
    exprs = [Expression(s, variables=PHASE_VARS, params=consts) for s in sources]

    def env(z):
        return dict(zip(PHASE_VARS, z))

    def p(z):
        e = env(z)
        return np.stack([np.broadcast_to(ex(e), z.shape[1:]) for ex in exprs])

    def grad(z):
        e = env(z)
        rows = []
        for ex in exprs:
            row = []
            for v in PHASE_VARS:
                j = ex.jet(e, {v: 1.0}, 1)
                row.append(np.broadcast_to(j.c[1], z.shape[1:]))
            rows.append(np.stack(row))
        return np.stack(rows)

    sym = DiracSymbol(p, grad, kind=kind, params=params)
    sym.expressions = exprs
    return sym


def domain_wall(m, params=None):
    """p = (xi1, xi2, m(x))."""
    return _expr_symbol(["xi1", "xi2", str(m)], "domain_wall", {"m": str(m)}, params)


def magnetic(m, A=("0", "0"), B=None, params=None):
    """p = (xi1 - A1(x), xi2 - A2(x), m(x)).

    If ``B`` is given (constant field) the gauge A = (-B x2, 0) is used.
    """
    if B is not None:
        A = (f"-({float(B)!r})*x2", "0")
    A1, A2 = str(A[0]), str(A[1])
    sym = _expr_symbol([f"xi1 - ({A1})", f"xi2 - ({A2})", str(m)], "magnetic",
                       {"m": str(m), "A": [A1, A2]}, params)
    return sym


def linear_symbol(C):
    """p_j(z) = (C z)_j for a real 3x4 matrix C."""
    C = np.array(C, dtype=float)
    if C.shape != (3, 4):
        raise PreconditionError("linear symbol needs a 3x4 coefficient matrix")

    def p(z):
        return np.tensordot(C, z, axes=(1, 0))

    def grad(z):
        shape = np.shape(z)[1:]
        return np.broadcast_to(C.reshape(3, 4, *([1] * len(shape))), (3, 4, *shape)).copy()

    sym = DiracSymbol(p, grad, kind="linear", params={"C": C.tolist()})
    sym.C = C
    return sym


def custom(p_sources, params=None):
    """Symbol from three expression strings in x1, x2, xi1, xi2."""
    return _expr_symbol([str(s) for s in p_sources], "custom", {"p": list(map(str, p_sources))}, params)


def from_callable(p, grad=None):
    return DiracSymbol(p, grad, kind="custom")


def eval_symbol(sym, z):
    v = sym(z)
    return Hermitian2.from_vector(v)


def bracket_vectors(g):
    """Pauli vector ({p2,p3}, {p3,p1}, {p1,p2}) from gradients g (3, 4, ...)."""
    gx, gxi = g[:, :2], g[:, 2:]

    def br(j, k):
        return np.sum(gxi[j] * gx[k] - gx[j] * gxi[k], axis=0)

    return np.stack([br(1, 2), br(2, 0), br(0, 1)])


def poisson_vector(sym, z):
    return bracket_vectors(sym.grad(z))


def poisson_matrix(sym, z):
    """M = (1/2i){d, d} as a Hermitian2."""
    return Hermitian2.from_vector(poisson_vector(sym, z))


def lambda_gap(sym, z):
    v = poisson_vector(sym, z)
    return np.sqrt(np.sqrt(np.sum(v ** 2, axis=0)))


def eigenlines(sym, z, tol=GAP_TOL):
    """Unit eigenvectors of M for its negative and positive eigenvalues."""
    z = as_z(z)
    v = poisson_vector(sym, z)
    lam2 = np.linalg.norm(v)
    if np.sqrt(lam2) < tol:
        raise GapCollapseError(f"lambda below {tol} at z={z.tolist()}")
    w, vecs = np.linalg.eigh(pauli_matrix(v))
    minus = EigenLine(phase_normalize(vecs[:, 0]), -1, z)
    plus = EigenLine(phase_normalize(vecs[:, 1]), +1, z)
    return minus, plus


def hamiltonian_field_vectors(g):
    """Pauli components of H_d, shape (4, 3, ...) in the (x, xi) ordering."""
    return np.concatenate([np.moveaxis(g[:, 2:], 0, 1), -np.moveaxis(g[:, :2], 0, 1)], axis=0)


def hamiltonian_field(sym, z):
    """H_d = sum_j d_xi_j d . d/dx_j - d_x_j d . d/dxi_j, one Hermitian2 per direction."""
    H = hamiltonian_field_vectors(sym.grad(z))
    return [Hermitian2.from_vector(H[k]) for k in range(4)]


def edge_vector_from_grad(g, tol=GAP_TOL):
    M = bracket_vectors(g)
    lam2 = np.sqrt(np.sum(M ** 2, axis=0))
    if np.any(np.sqrt(lam2) < tol):
        raise GapCollapseError("lambda below tolerance in edge vector field")
    H = hamiltonian_field_vectors(g)
    # -Tr(M H)/(2 lam^2) with Tr((a.s)(b.s)) = 2 a.b
    return -np.einsum("k...,jk...->j...", M, H) / lam2


def edge_vector_field(sym, z, tol=GAP_TOL):
    """V_d as a real 4-vector (or (4, ...) for batched z)."""
    return edge_vector_from_grad(sym.grad(z), tol)


def find_crossing(sym, guess, tol=1e-11, maxiter=50, return_info=False):
    """Gauss-Newton on sum p_j^2 towards the crossing set p = 0."""
    z = as_z(guess).copy()
    it = 0
    for it in range(maxiter + 1):
        p = sym(z)
        if np.max(np.abs(p)) < tol:
            return (z, it) if return_info else z
        if it == maxiter:
            break
        z = z - np.linalg.pinv(sym.grad(z)) @ p
    raise NotFoundError(f"no crossing found after {maxiter} iterations (|p| = {np.max(np.abs(p)):.3e})")


def check_transversality(sym, z, on_tol=1e-8, indep_tol=1e-8):
    z = as_z(z)
    p = sym(z)
    if np.max(np.abs(p)) > on_tol:
        raise PreconditionError(f"point not on the crossing set (|p| = {np.max(np.abs(p)):.3e})")
    g = sym.grad(z)
    smin = float(np.linalg.svd(g, compute_uv=False)[-1])
    return {
        "independent": smin > indep_tol,
        "min_singular_value": smin,
        "lambda": float(lambda_gap(sym, z)),
    }
