"""Linear symplectic and SU(2) normal forms.

Quadratic forms are stored by their Hessian Q, with q(z) = <Qz, z>/2.
The target normal forms are

    q o S = lam^2 (x2^2 + xi1^2 + xi2^2)
    U (d o S)(z) U^* = lam [[xi1, x2 - i xi2], [x2 + i xi2, -xi1]].
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import KernelProjectionError, PreconditionError, SignatureError
from .symbol_core import J4, SIGMA, bracket_vectors, linear_symbol, pauli_matrix, phase_normalize

# rows pick (x2, xi2, xi1): the Pauli vector of the canonical symbol
C0 = np.array([
    [0, 1, 0, 0],
    [0, 0, 0, 1],
    [0, 0, 1, 0],
], dtype=float)

# (x1, x2, xi1, xi2) -> (-x1, x2, -xi1, xi2)
REFLECT = np.diag([-1.0, 1.0, -1.0, 1.0])

# (w1, w2, w3, w4) -> (w1, -w4, w3, w2), used when the top-left block is singular
SWAP = np.array([
    [1, 0, 0, 0],
    [0, 0, 0, -1],
    [0, 0, 1, 0],
    [0, 1, 0, 0],
], dtype=float)

TOPLEFT_TOL = 1e-8


@dataclass
class NormalForm:
    S: np.ndarray
    U: np.ndarray
    lam: float
    nu: int = 1
    swapped: bool = False
    route: str = "direct"
    info: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.S, self.U, self.lam))


def canonical(z, lam=1.0):
    """lam * [[xi1, x2 - i xi2], [x2 + i xi2, -xi1]] for z of shape (4, ...)."""
    z = np.asarray(z, dtype=float)
    return lam * pauli_matrix(np.tensordot(C0, z, axes=(1, 0)))


def so3_from_su2(U):
    """B with U (v.s) U^* = (B v).s."""
    U = np.asarray(U, dtype=complex)
    return np.real(np.array([[np.trace(SIGMA[k] @ U @ SIGMA[j] @ U.conj().T) / 2
                              for j in range(3)] for k in range(3)]))


def su2_from_so3(B, tol=1e-9):
    """U in SU(2) with U (v.s) U^* = (B v).s.

    Quaternion extraction with pivoting on the largest of the trace
    combinations. Sign convention: the scalar part is made nonnegative; for
    half-turns the largest vector component is made positive.
    """
    B = np.asarray(B, dtype=float)
    if B.shape != (3, 3) or np.max(np.abs(B.T @ B - np.eye(3))) > tol:
        raise PreconditionError("su2_from_so3 needs an orthogonal 3x3 matrix")
    if abs(np.linalg.det(B) - 1) > tol:
        raise PreconditionError("su2_from_so3 needs det B = +1")
    tr = np.trace(B)
    cands = [tr, B[0, 0], B[1, 1], B[2, 2]]
    k = int(np.argmax(cands))
    if k == 0:
        w = 0.5 * np.sqrt(1 + tr)
        x = (B[2, 1] - B[1, 2]) / (4 * w)
        y = (B[0, 2] - B[2, 0]) / (4 * w)
        zq = (B[1, 0] - B[0, 1]) / (4 * w)
    elif k == 1:
        x = 0.5 * np.sqrt(1 + B[0, 0] - B[1, 1] - B[2, 2])
        w = (B[2, 1] - B[1, 2]) / (4 * x)
        y = (B[0, 1] + B[1, 0]) / (4 * x)
        zq = (B[0, 2] + B[2, 0]) / (4 * x)
    elif k == 2:
        y = 0.5 * np.sqrt(1 - B[0, 0] + B[1, 1] - B[2, 2])
        w = (B[0, 2] - B[2, 0]) / (4 * y)
        x = (B[0, 1] + B[1, 0]) / (4 * y)
        zq = (B[1, 2] + B[2, 1]) / (4 * y)
    else:
        zq = 0.5 * np.sqrt(1 - B[0, 0] - B[1, 1] + B[2, 2])
        w = (B[1, 0] - B[0, 1]) / (4 * zq)
        x = (B[0, 2] + B[2, 0]) / (4 * zq)
        y = (B[1, 2] + B[2, 1]) / (4 * zq)
    q = np.array([w, x, y, zq])
    q /= np.linalg.norm(q)
    if abs(q[0]) < 1e-12:
        q[0] = 0.0
        if q[1 + np.argmax(np.abs(q[1:]))] < 0:
            q = -q
    elif q[0] < 0:
        q = -q
    w, x, y, zq = q
    return w * np.eye(2) - 1j * (x * SIGMA[0] + y * SIGMA[1] + zq * SIGMA[2])


def hamiltonian_matrix(Q, tol=1e-7):
    """L = J Q, checked to have spectrum {0, 0, +-i mu}."""
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (4, 4) or np.max(np.abs(Q - Q.T)) > 1e-12 * max(1.0, np.max(np.abs(Q))):
        raise SignatureError("quadratic form must be a symmetric 4x4 matrix")
    L = J4 @ Q
    scale = np.max(np.abs(Q))
    if scale == 0:
        raise SignatureError("zero quadratic form")
    ev = np.linalg.eigvalsh(Q)
    if ev[0] < -tol * scale or ev[1] <= tol * scale:
        raise SignatureError(f"Hessian eigenvalues {ev} do not have signature (0,+,+,+)")
    w = np.linalg.eigvals(L)
    w = w[np.argsort(np.abs(w))]
    if (np.max(np.abs(w[:2])) > np.sqrt(tol) * scale
            or np.max(np.abs(w[2:].real)) > tol * scale
            or abs(w[2].imag + w[3].imag) > tol * scale):
        raise SignatureError(f"spectrum of JQ is {w}, expected 0, 0, +-i mu")
    return L


def _repair_top_left(S):
    """Apply the column swap when the position block of S is singular."""
    if abs(np.linalg.det(S[:2, :2])) >= TOPLEFT_TOL:
        return S, False
    S2 = S @ SWAP
    if abs(np.linalg.det(S2[:2, :2])) < TOPLEFT_TOL:
        raise KernelProjectionError("top-left block stays singular after the column swap")
    return S2, True


# rotation by -pi/2 about axis 3: undoes the Pauli-vector action of SWAP
_V_SWAP = su2_from_so3(np.array([[0, 1, 0], [-1, 0, 0], [0, 0, 1]], dtype=float))


def reduce_quadratic_form(Q, return_info=False):
    """Symplectic S with S^T Q S = 2 lam^2 diag(0, 1, 1, 1).

    Parameters
    ----------
    Q : (4, 4) array
        Hessian of q; must have signature (0, +, +, +) and a kernel whose
        projection to position space is nonzero.

    Returns
    -------
    S, lam
    """
    Q = np.asarray(Q, dtype=float)
    L = hamiltonian_matrix(Q)
    w, V = np.linalg.eig(L)
    k = int(np.argmax(w.imag))
    mu = w[k].imag
    lam = np.sqrt(mu / 2)
    v = V[:, k]
    u2, u4 = v.real.copy(), v.imag.copy()
    om = u2 @ J4 @ u4
    if abs(om) < 1e-14:
        raise SignatureError("degenerate eigenplane")
    # orientation: u2^T J u4 = 1
    if om < 0:
        u4 = -u4
        om = -om
    u2 /= np.sqrt(om)
    u4 /= np.sqrt(om)
    # u3 in ker L^2, orthogonal to ker L
    _, s, Vt = np.linalg.svd(L)
    kerL = Vt[-1]
    _, s2, Vt2 = np.linalg.svd(L @ L)
    K2 = Vt2[-2:]
    c = K2 @ kerL
    u3 = K2.T @ np.array([-c[1], c[0]])
    u3 /= np.linalg.norm(u3)
    n3 = u3 @ Q @ u3 / (2 * lam ** 2)
    u3 /= np.sqrt(n3)
    u1 = L @ u3 / (2 * lam ** 2)
    S = np.column_stack([u1, u2, u3, u4])
    # fix orientation of the (u1, u3) pair
    if u1 @ J4 @ u3 < 0:
        S[:, 0] = -S[:, 0]
    if np.linalg.norm(S[:2, 0]) < 1e-8 * np.linalg.norm(S[:, 0]):
        raise KernelProjectionError("kernel of q projects to zero in position space")
    S, swapped = _repair_top_left(S)
    if return_info:
        return S, lam, {"swapped": swapped}
    return S, lam


def _as_C(sym):
    if hasattr(sym, "C"):
        return np.asarray(sym.C, dtype=float)
    return np.asarray(sym, dtype=float)


def _check_linear(C):
    if C.shape != (3, 4):
        raise PreconditionError("linear symbol needs a 3x4 coefficient matrix")
    if np.linalg.svd(C, compute_uv=False)[-1] < 1e-10 * max(1.0, np.max(np.abs(C))):
        raise PreconditionError("rows of the linear symbol are not independent")
    kern = np.linalg.svd(C)[2][-1]
    if np.linalg.norm(kern[:2]) < 1e-8:
        raise KernelProjectionError("kernel of the symbol projects to zero in position space")


def reduce_linear_symbol(sym):
    """Normal form (S, U, lam) of a linear Dirac symbol.

    Diagonalize M, rotate and rescale so that the new functions satisfy
    {p1,p2} = -1 and {p2,p3} = {p3,p1} = 0, then complete them to a
    Darboux basis.
    """
    C = _as_C(sym)
    _check_linear(C)
    M = bracket_vectors(C)
    lam2 = np.linalg.norm(M)
    lam = np.sqrt(lam2)
    _, vecs = np.linalg.eigh(pauli_matrix(M))
    # fix the eigenvector phases so that U depends continuously on C
    vecs = np.column_stack([phase_normalize(vecs[:, 0]), phase_normalize(vecs[:, 1])])
    U = vecs.conj().T
    U = U / np.sqrt(np.linalg.det(U))
    R = so3_from_su2(U)
    Ct = R @ C / lam
    c1, c2, c3 = Ct
    # w with {w, c3} = -1, {w, c2} = {w, c1} = 0; {a.z, b.z} = b^T J a
    A = np.array([c3 @ J4, c2 @ J4, c1 @ J4])
    w = np.linalg.pinv(A) @ np.array([-1.0, 0.0, 0.0])
    T = np.array([w, c1, c3, c2])
    S = np.linalg.inv(T)
    S, swapped = _repair_top_left(S)
    if swapped:
        U = _V_SWAP @ U
    return NormalForm(S, U, float(lam), nu=1, swapped=swapped, route="direct")


def reduce_linear_symbol_lemma(sym):
    """Independent route: reduce q = -det d first, then find the gauge."""
    C = _as_C(sym)
    _check_linear(C)
    Q = 2 * C.T @ C
    S, lam, info = reduce_quadratic_form(Q, return_info=True)
    B = C @ S @ C0.T / lam
    nu = 1
    if np.linalg.det(B) < 0:
        S = S @ REFLECT
        B = B @ np.diag([1.0, 1.0, -1.0])
        nu = -1
    U = su2_from_so3(B.T)
    return NormalForm(S, U, float(lam), nu=nu, swapped=info["swapped"], route="lemma")


def verify_normal_form(sym, S, U, lam, n_samples=100, seed=0):
    """Residuals of the normal form on random points."""
    C = _as_C(sym)
    S = np.asarray(S, dtype=float)
    U = np.asarray(U, dtype=complex)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((4, n_samples))
    lhs = U @ pauli_matrix(C @ S @ z) @ U.conj().T
    rhs = canonical(z, lam)
    form = float(np.max(np.linalg.norm(lhs - rhs, axis=(1, 2))))
    symp = float(np.max(np.abs(S.T @ J4 @ S - J4)))
    unit = float(np.max(np.abs(U.conj().T @ U - np.eye(2))))
    det = float(abs(np.linalg.det(U) - 1))
    return {
        "normal_form": form,
        "symplectic": symp,
        "unitary": unit,
        "det": det,
        "su2": max(unit, det),
        "top_left_det": float(abs(np.linalg.det(S[:2, :2]))),
    }


def random_linear_symbol(rng, max_tries=100):
    """Random 3x4 coefficient matrix with independent rows and admissible kernel."""
    for _ in range(max_tries):
        C = rng.standard_normal((3, 4))
        try:
            _check_linear(C)
        except PreconditionError:
            continue
        if np.linalg.norm(bracket_vectors(C)) > 1e-3:
            return linear_symbol(C)
    raise PreconditionError("could not draw an admissible linear symbol")
