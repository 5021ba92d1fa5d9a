"""Pseudospectral RK4 evolution of (h D_t + D) Psi = 0 on a periodic box.

D = s1 (h D1 - A1) + s2 (h D2 - A2) + m s3 with D_j = -i d/dx_j. Derivatives
are applied in Fourier space, multiplications pointwise.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError, PreconditionError, StepSizeError
from .expr import Expression
from .grid import Grid2, SpinorField
from .symbol_core import magnetic, poisson_vector

RK4_IMAG_LIMIT = 2 * np.sqrt(2)


def periodic_wall(L, width=1.0):
    """Smooth L-periodic wall: w tanh(S(x2)/w) with S = (L/2 pi) sin(2 pi x2 / L).

    Equals x2 to first order at x2 = 0, saturates to +-w, and has a second
    (oppositely oriented) zero at the seam x2 = +-L/2.
    """
    return f"({width!r})*tanh(({L!r}/(2*pi))*sin(2*pi*x2/{L!r})/({width!r}))"


def periodic_gauge(L, B):
    """A = (-B S(x2), 0) with S as in periodic_wall; the field is B cos(2 pi x2/L)."""
    return (f"-({float(B)!r})*({L!r}/(2*pi))*sin(2*pi*x2/{L!r})", "0")


@dataclass
class PDEModel:
    """Mass m(x) and vector potential A(x) as expression strings in x1, x2."""

    m: str
    A: tuple = ("0", "0")
    params: dict = field(default_factory=dict)

    def sample(self, grid):
        X1, X2 = grid.mesh()
        env = {"x1": X1, "x2": X2}
        out = []
        for src in (self.m, *self.A):
            e = Expression(src, variables=("x1", "x2"), params=self.params)
            out.append(np.broadcast_to(np.asarray(e(env), dtype=float), X1.shape).copy())
        return SampledModel(grid, *out)

    def symbol(self):
        return magnetic(self.m, A=self.A, params=self.params)


@dataclass
class SampledModel:
    grid: Grid2
    m: np.ndarray
    A1: np.ndarray
    A2: np.ndarray

    def coefficient_bound(self):
        return float(np.max(np.abs(self.m)) + np.max(np.abs(self.A1)) + np.max(np.abs(self.A2)))


def _as_sampled(model, grid):
    if isinstance(model, SampledModel):
        if model.grid != grid:
            raise PreconditionError("sampled model lives on a different grid")
        return model
    return model.sample(grid)


def apply_dirac(model, psi, h, grid):
    """D psi for psi of shape (2, N1, N2)."""
    mod = _as_sampled(model, grid)
    K1, K2 = grid.wavenumbers()
    f0, f1 = np.fft.fft2(psi[0]), np.fft.fft2(psi[1])
    # s1 (hD1 - A1) + s2 (hD2 - A2): off-diagonal (p1 - i p2) and (p1 + i p2)
    up = np.fft.ifft2(h * (K1 - 1j * K2) * f1) - (mod.A1 - 1j * mod.A2) * psi[1]
    dn = np.fft.ifft2(h * (K1 + 1j * K2) * f0) - (mod.A1 + 1j * mod.A2) * psi[0]
    return np.array([up + mod.m * psi[0], dn - mod.m * psi[1]])


def spectral_radius_bound(model, h, grid):
    """Upper bound for the spectral radius of D / h."""
    mod = _as_sampled(model, grid)
    kmax = np.hypot(np.pi / grid.dx[0], np.pi / grid.dx[1])
    return (h * kmax + mod.coefficient_bound()) / h


def max_stable_dt(model, h, grid, safety=0.9):
    return safety * RK4_IMAG_LIMIT / spectral_radius_bound(model, h, grid)


@dataclass
class Evolution:
    times: np.ndarray
    snapshots: list            # SpinorField per time
    final: SpinorField
    dt: float
    nsteps: int
    mass: np.ndarray


def evolve(model, psi0, h, T, dt=None, snapshots=50, grid=None, keep_fields=True):
    """RK4 for d_t psi = -(i/h) D psi up to time T.

    Raises StepSizeError when dt exceeds 0.9 * 2 sqrt(2) / rho(D/h) and
    EvaluationError if the field becomes non-finite.
    """
    if isinstance(psi0, SpinorField):
        grid = psi0.grid
        psi = psi0.psi.copy()
    else:
        if grid is None:
            raise PreconditionError("evolve needs a grid for a bare array")
        psi = np.array(psi0, dtype=complex)
    mod = _as_sampled(model, grid)
    bound = max_stable_dt(mod, h, grid)
    if dt is None:
        dt = bound
    if dt <= 0:
        raise PreconditionError("dt must be positive")
    if dt > bound:
        raise StepSizeError(f"dt={dt:.3e} exceeds the RK4 bound 0.9*2*sqrt(2)*h/(h|k|max + max|m| + max|A|) "
                            f"= {bound:.3e}", bound)
    nsteps = max(1, int(np.ceil(T / dt - 1e-12)))
    step = T / nsteps
    every = max(1, -(-nsteps // max(1, snapshots)))

    def rhs(f):
        return -1j / h * apply_dirac(mod, f, h, grid)

    cell = grid.cell
    times, snaps, mass = [0.0], [SpinorField(psi.copy(), grid, h)], [np.sum(np.abs(psi) ** 2) * cell]
    for k in range(nsteps):
        k1 = rhs(psi)
        k2 = rhs(psi + step / 2 * k1)
        k3 = rhs(psi + step / 2 * k2)
        k4 = rhs(psi + step * k3)
        psi = psi + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if (k + 1) % every == 0 or k + 1 == nsteps:
            if not np.all(np.isfinite(psi)):
                raise EvaluationError(f"non-finite field at step {k + 1} (t={(k + 1) * step:.4g}, dt={step:.3e})")
            times.append((k + 1) * step)
            mass.append(np.sum(np.abs(psi) ** 2) * cell)
            if keep_fields:
                snaps.append(SpinorField(psi.copy(), grid, h))
    final = SpinorField(psi, grid, h)
    return Evolution(np.array(times), snaps, final, step, nsteps, np.array(mass))


def free_mode_solution(k, h, t, c0):
    """Exact solution for one Fourier mode of the free operator (m = A = 0)."""
    p = h * np.asarray(k, dtype=float)
    mat = np.array([[0, p[0] - 1j * p[1]], [p[0] + 1j * p[1], 0]])
    w, V = np.linalg.eigh(mat)
    return V @ (np.exp(-1j * w * t / h) * (V.conj().T @ np.asarray(c0, dtype=complex)))


def _circular_mean(w, x, L):
    ang = 2 * np.pi * x / L
    z = np.sum(w * np.exp(1j * ang)) / np.sum(w)
    return float(L * np.angle(z) / (2 * np.pi))


def line_fractions(field_, model):
    """Fractions of mass in L^-(x, 0) and L^+(x, 0) of M for the model symbol."""
    grid = field_.grid
    X1, X2 = grid.mesh()
    z = np.stack([X1, X2, np.zeros_like(X1), np.zeros_like(X1)])
    M = poisson_vector(model.symbol(), z)
    nM = np.sqrt(np.sum(M ** 2, axis=0))
    Mh = np.where(nM > 1e-12, M / np.where(nM > 1e-12, nM, 1.0), 0.0)
    psi = field_.psi
    dens = np.sum(np.abs(psi) ** 2, axis=0)
    # psi^* (Mh . s) psi
    spin = np.stack([2 * np.real(np.conj(psi[0]) * psi[1]),
                     2 * np.imag(np.conj(psi[0]) * psi[1]),
                     np.abs(psi[0]) ** 2 - np.abs(psi[1]) ** 2])
    proj = np.sum(Mh * spin, axis=0)
    tot = np.sum(dens)
    plus = float(np.sum((dens + proj) / 2) / tot)
    return {"minus": 1.0 - plus, "plus": plus}


def observables(field_, model):
    """mass, linf, centroid, interface mass fraction and L+- fractions."""
    grid = field_.grid
    h = field_.h
    mod = _as_sampled(model, grid)
    dens = np.sum(np.abs(field_.psi) ** 2, axis=0)
    mass = float(np.sum(dens) * grid.cell)
    X1, X2 = grid.mesh()
    centroid = (_circular_mean(dens, X1, grid.L[0]), _circular_mean(dens, X2, grid.L[1]))
    K1, K2 = grid.wavenumbers()
    mf = np.fft.fft2(mod.m)
    g1 = np.real(np.fft.ifft2(1j * K1 * mf))
    g2 = np.real(np.fft.ifft2(1j * K2 * mf))
    gn = np.hypot(g1, g2)
    dist = np.abs(mod.m) / np.maximum(gn, 1e-300)
    near = dist < 3 * np.sqrt(h)
    out = {
        "mass": mass,
        "linf": float(np.sqrt(np.max(dens))),
        "center_of_mass": centroid,
        "interface_mass_fraction": float(np.sum(dens[near]) / np.sum(dens)),
    }
    if isinstance(model, PDEModel):
        out["line_projections"] = line_fractions(field_, model)
    return out


def compare_to_prediction(snaps, predicted):
    """L2 error and normalized overlap between simulated and predicted fields."""
    if isinstance(snaps, SpinorField):
        snaps, predicted = [snaps], [predicted]
    l2, ov = [], []
    for a, b in zip(snaps, predicted):
        if a.grid != b.grid or a.psi.shape != b.psi.shape:
            raise PreconditionError("simulation and prediction live on different grids")
        l2.append(float(np.sqrt(np.sum(np.abs(a.psi - b.psi) ** 2) * a.grid.cell)))
        ov.append(abs(a.inner(b)) / (a.norm() * b.norm()))
    return {"l2_error": np.array(l2), "overlap": np.array(ov)}


def fit_velocity(times, centers):
    """Least-squares velocity from centroid samples (shape (nt, 2))."""
    times = np.asarray(times, float)
    centers = np.asarray(centers, float)
    A = np.stack([times, np.ones_like(times)], axis=1)
    coef, *_ = np.linalg.lstsq(A, centers, rcond=None)
    return coef[0]


def magnetic_edge_packet(B, h, grid, v, x_star=(0.0, 0.0), envelope=None):
    """Superposition of exact edge modes of s1 (hD1 + B x2) + s2 hD2 + x2 s3.

    A mode with hD1 = k has the transverse profile of width sqrt(h/c),
    c = sqrt(1 + B^2), centred at x2 = -k B / c^2, and the constant spinor v
    (the L^- line of M = s1 - B s3). The x1 envelope defaults to the unit
    Gaussian at scale sqrt(h).
    """
    c = np.hypot(1.0, B)
    d1, d2 = grid.displacement(x_star)
    x1 = d1[:, 0]
    if envelope is None:
        def envelope(s):
            return np.pi ** -0.25 * np.exp(-s ** 2 / 2)
    a = envelope(x1 / np.sqrt(h)) / h ** 0.25
    ahat = np.fft.fft(a)
    kappa = 2 * np.pi * np.fft.fftfreq(grid.N[0], d=grid.dx[0])
    shift = h * kappa * B / c ** 2
    y = d2[0][None, :] + shift[:, None]
    y = y - grid.L[1] * np.round(y / grid.L[1])
    G = (c / (np.pi * h)) ** 0.25 * np.exp(-c * y ** 2 / (2 * h))
    amp = np.fft.ifft(ahat[:, None] * G, axis=0)
    v = np.asarray(v, dtype=complex)
    return SpinorField(v[:, None, None] * amp[None], grid, h)
