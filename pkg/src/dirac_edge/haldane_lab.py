"""Honeycomb tight-binding models, Dirac cones and strained effective symbols.

Momenta are lattice coordinates by default: xi_j is the phase picked up
along the lattice vector v_j, so

    omega_a(xi) = (1 - a1 - a2) + (1 + a1) e^{i xi1} + (1 + a2) e^{i xi2},
    beta(xi) = sin xi1 - sin xi2 - sin(xi1 - xi2),

and H(xi) = [[2 m beta, omega], [conj(omega), -2 m beta]]. The Cartesian
convention uses the phases xi . v_j instead.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NotFoundError, PreconditionError
from .expr import Expression
from .symbol_core import Hermitian2, custom, edge_vector_field

SQ3 = np.sqrt(3.0)
V1 = np.array([-0.5, -SQ3 / 2])
V2 = np.array([0.5, -SQ3 / 2])
XI_STAR = np.array([2 * np.pi / 3, -2 * np.pi / 3])
LATTICE = np.array([V1, V2])        # rows v_j; lattice phases = LATTICE @ xi_cart


@dataclass(frozen=True)
class BlochHamiltonian:
    a: tuple = (0.0, 0.0)
    m: float = 0.0
    convention: str = "lattice"

    def phases(self, xi):
        xi = np.asarray(xi, dtype=float)
        if self.convention == "lattice":
            return xi
        if self.convention == "cartesian":
            return np.tensordot(LATTICE, xi, axes=(1, 0))
        raise PreconditionError(f"unknown momentum convention {self.convention!r}")

    def omega(self, xi):
        k = self.phases(xi)
        a1, a2 = self.a
        return (1 - a1 - a2) + (1 + a1) * np.exp(1j * k[0]) + (1 + a2) * np.exp(1j * k[1])

    def omega_grad(self, xi):
        """d omega / d xi as a complex array of shape (2, ...)."""
        k = self.phases(xi)
        a1, a2 = self.a
        g = np.array([1j * (1 + a1) * np.exp(1j * k[0]), 1j * (1 + a2) * np.exp(1j * k[1])])
        if self.convention == "cartesian":
            g = np.tensordot(LATTICE.T, g, axes=(1, 0))
        return g

    def beta(self, xi):
        k = self.phases(xi)
        return np.sin(k[0]) - np.sin(k[1]) - np.sin(k[0] - k[1])

    def bands(self, xi):
        e = np.sqrt(np.abs(self.omega(xi)) ** 2 + (2 * self.m * self.beta(xi)) ** 2)
        return -e, e


def bloch_matrix(model, xi):
    """H(xi) as a Hermitian2: omega in the upper-right entry, 2 m beta on the diagonal."""
    w = complex(model.omega(xi))
    return Hermitian2(w.real, -w.imag, 2 * model.m * float(model.beta(xi)))


def resolve_convention(tol=1e-12):
    """Which momentum convention puts a zero of omega at (2 pi/3, -2 pi/3)."""
    out = {}
    for conv in ("lattice", "cartesian"):
        out[conv] = float(abs(BlochHamiltonian(convention=conv).omega(XI_STAR)))
    good = [c for c, v in out.items() if v < tol]
    return {"residuals": out, "convention": good[0] if good else None}


@dataclass
class ConeData:
    xi: np.ndarray
    alpha: np.ndarray = None        # complex gradient d omega(xi_a), shape (2,)
    mass_coefficient: float = None  # 2 m beta(xi_a)
    iterations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def alpha1(self):
        return self.alpha.real

    @property
    def alpha2(self):
        return self.alpha.imag


def find_dirac_point(model, guess=None, tol=1e-12, maxiter=50):
    """Newton on (Re omega, Im omega) with the analytic Jacobian."""
    if np.hypot(*model.a) >= 0.2:
        raise PreconditionError("anisotropy outside the Newton basin (|a| < 0.2)")
    if guess is None:
        guess = XI_STAR if model.convention == "lattice" else np.linalg.solve(LATTICE, XI_STAR)
    xi = np.array(guess, dtype=float)
    for it in range(maxiter + 1):
        w = model.omega(xi)
        if abs(w) < tol:
            return ConeData(xi, iterations=it, info={"residual": float(abs(w))})
        if it == maxiter:
            break
        g = model.omega_grad(xi)
        J = np.array([g.real, g.imag])
        try:
            step = np.linalg.solve(J, -np.array([w.real, w.imag]))
        except np.linalg.LinAlgError:
            break
        xi = xi + step
        if not np.all(np.isfinite(xi)) or np.linalg.norm(step) > 10:
            break
    raise NotFoundError(f"Dirac point search left the basin (|omega| = {abs(model.omega(xi)):.2e})")


def extract_cone(model, xi_a, step=1e-3, levels=4):
    """Complex gradient of omega at xi_a by central differences with Richardson extrapolation."""
    xi_a = np.asarray(xi_a.xi if isinstance(xi_a, ConeData) else xi_a, dtype=float)
    res = float(abs(model.omega(xi_a)))
    if res > 1e-10:
        raise PreconditionError(f"xi_a is not a zero of omega (|omega| = {res:.2e})")
    cols, errs = [], []
    for j in range(2):
        e = np.zeros(2)
        e[j] = 1.0
        T = []
        for lev in range(levels):
            d = step / 2 ** lev
            T.append([(model.omega(xi_a + d * e) - model.omega(xi_a - d * e)) / (2 * d)])
        for k in range(1, levels):
            for lev in range(k, levels):
                T[lev].append(T[lev][k - 1] + (T[lev][k - 1] - T[lev - 1][k - 1]) / (4 ** k - 1))
        cols.append(T[-1][-1])
        errs.append(abs(T[-1][-1] - T[-2][-2]))
    alpha = np.array(cols)
    A = np.array([alpha.real, alpha.imag])
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] < 1e-10:
        raise PreconditionError("flat band: cone gradient rows are dependent")
    cone = ConeData(xi_a, alpha, 2 * model.m * float(model.beta(xi_a)))
    cone.info = {
        "richardson_error": float(max(errs)),
        "condition_number": float(sv[0] / sv[-1]),
        "component_magnitudes": np.abs(alpha).tolist(),
        "residual": res,
    }
    return cone


def cartesian_cone(cone):
    """Gradient in Cartesian momenta: d/dxi_cart = sum_j v_j d/dxi_j."""
    return LATTICE.T @ cone.alpha


def band_scan(model, n=64):
    """Rows (xi1, xi2, E-, E+) on an n x n grid of [-pi, pi)^2."""
    ks = -np.pi + 2 * np.pi * np.arange(n) / n
    K1, K2 = np.meshgrid(ks, ks, indexing="ij")
    xi = np.stack([K1, K2])
    em, ep = model.bands(xi)
    return np.stack([K1.ravel(), K2.ravel(), em.ravel(), ep.ravel()], axis=1)


# strained effective symbols ---------------------------------------------------

@dataclass
class StrainField:
    """alpha_1(x), alpha_2(x), xi(x) (pairs of expressions) and m(x) in x1, x2."""

    alpha1: tuple = ("1", "0")
    alpha2: tuple = ("0", "1")
    xi: tuple = ("0", "0")
    m: str = "x2"
    params: dict = field(default_factory=dict)

    def _exprs(self):
        srcs = [*self.alpha1, *self.alpha2, *self.xi, self.m]
        return [Expression(str(s), variables=("x1", "x2"), params=self.params) for s in srcs]

    def evaluate(self, x):
        """Values and gradients at a point: dict of arrays."""
        x = np.asarray(x, dtype=float)
        env = {"x1": x[0], "x2": x[1]}
        vals, grads = [], []
        for e in self._exprs():
            vals.append(float(e(env)))
            grads.append([float(e.jet(env, {v: 1.0}, 1).c[1]) for v in ("x1", "x2")])
        vals, grads = np.array(vals), np.array(grads)
        return {
            "A": vals[:4].reshape(2, 2),          # rows alpha_1, alpha_2
            "xi": vals[4:6],
            "dxi": grads[4:6],                    # dxi[i, j] = d_j xi_i
            "m": vals[6],
            "grad_m": grads[6],
        }

    def symbol(self):
        a1, a2, (q1, q2) = self.alpha1, self.alpha2, self.xi
        d1 = f"(xi1 - ({q1}))"
        d2 = f"(xi2 - ({q2}))"
        p1 = f"({a1[0]})*{d1} + ({a1[1]})*{d2}"
        p2 = f"({a2[0]})*{d1} + ({a2[1]})*{d2}"
        sym = custom([p1, p2, self.m], params=self.params)
        sym.kind = "strained"
        return sym


def effective_symbol(cone, strain=None, m="x2"):
    """Symbol for slowly varying parameters; constant frame from the cone when no strain is given."""
    if strain is None:
        a1, a2 = cone.alpha1, cone.alpha2
        a1, a2 = [repr(float(v)) for v in a1], [repr(float(v)) for v in a2]
        strain = StrainField(tuple(a1), tuple(a2), ("0", "0"), m)
    return strain.symbol()


def pseudo_geometry(strain, x):
    """Pseudo-metric and magnetic data at x.

    Returns the covector metric G = sum alpha_j alpha_j^T, det[alpha_1, alpha_2],
    m_tilde = m / det and B_eff = (d2 xi1 - d1 xi2) / det as displayed for the
    strained model, and the volume-consistent field B_vol = (d2 xi1 - d1 xi2) |det|
    whose modulus is |d xi|_g.
    """
    d = strain.evaluate(x)
    A = d["A"]
    det = float(np.linalg.det(A))
    if abs(det) < 1e-12:
        raise PreconditionError("degenerate strain frame: det[alpha_1, alpha_2] = 0")
    G = A.T @ A
    curl = d["dxi"][0, 1] - d["dxi"][1, 0]
    return {
        "g": G,
        "det": det,
        "m_tilde": d["m"] / det,
        "B_eff": curl / det,
        "B_vol": curl * abs(det),
        "grad_m_g": float(np.linalg.norm(A @ d["grad_m"])),
        "dxi_g": float(abs(curl) * abs(det)),
    }


def edge_speed_strained(strain, x):
    """|grad_g m|_g / sqrt(|grad_g m|_g^2 + |dxi|_g^2) and the unit (in g) edge direction."""
    d = strain.evaluate(x)
    if np.linalg.norm(d["grad_m"]) == 0:
        raise PreconditionError("grad m vanishes")
    geo = pseudo_geometry(strain, x)
    speed = geo["grad_m_g"] / np.hypot(geo["grad_m_g"], geo["dxi_g"])
    gm = d["grad_m"]
    tang = np.sign(geo["det"]) * np.array([-gm[1], gm[0]])
    Ginv = np.linalg.inv(geo["g"])      # metric on tangent vectors
    tang = tang / np.sqrt(tang @ Ginv @ tang)
    return {"speed": float(speed), "direction": tang, **geo}


def symbol_edge_speed(strain, x):
    """Edge speed from the vector field of the effective symbol, measured in g."""
    d = strain.evaluate(x)
    z = np.array([*np.asarray(x, dtype=float), *d["xi"]])
    V = edge_vector_field(strain.symbol(), z)
    G = d["A"].T @ d["A"]
    v = V[:2]
    return float(np.sqrt(v @ np.linalg.inv(G) @ v)), v
