"""Model operator on R^2 and its one-dimensional blocks.

The model operator is

    D = (h lam D1 + h lam'/2i + h^2 D1 mu D1 - h^2 mu''/4) s3
        + (lam + h mu D1 + h mu'/2i) [[0, x2 - h d2], [x2 + h d2, 0]] + h s

with D1 = -i d/dx1. Hermite functions in x2 split it into a scalar block L
(n = 0) and 2x2 blocks D_{n,eps}, eps = sqrt(h/2n). This module holds the
Hermite machinery, pseudospectral solvers for the blocks, the
bicharacteristic flow of lam(x) <xi>, the eikonal phase, WKB amplitudes and
the oscillatory parametrix.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline
from scipy.optimize import brentq

from .errors import (BudgetError, PreconditionError, ResolutionError,
                     StepSizeError, ValidityError)
from .expr import Profile1D

SQRT_PI = np.sqrt(np.pi)


# coefficients -------------------------------------------------------------

class ModelCoefficients1D:
    """lam(x) > 0, mu(x), s(x) with exact derivatives."""

    def __init__(self, lam="1", mu="0", s="0", params=None):
        self.lam = lam if isinstance(lam, Profile1D) else Profile1D(lam, var="x", params=params)
        self.mu = mu if isinstance(mu, Profile1D) else Profile1D(mu, var="x", params=params)
        self.s = s if isinstance(s, Profile1D) else Profile1D(s, var="x", params=params)

    @property
    def mu_zero(self):
        return self.mu.is_constant() and float(self.mu(0.0)) == 0.0

    @property
    def s_zero(self):
        return self.s.is_constant() and float(self.s(0.0)) == 0.0

    def lam_bounds(self, lo=-50.0, hi=50.0, n=20001):
        v = self.lam(np.linspace(lo, hi, n))
        return float(np.min(v)), float(np.max(v))

    def Lambda(self, y):
        """int_0^y 1/lam, by Gauss-Legendre on [0, y]."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        nodes, weights = np.polynomial.legendre.leggauss(64)
        out = np.empty_like(y)
        for i, yi in enumerate(y):
            # split long intervals so the rule stays exact to roundoff
            m = max(1, int(np.ceil(abs(yi) / 0.5)))
            edges = np.linspace(0, yi, m + 1)
            tot = 0.0
            for a, b in zip(edges[:-1], edges[1:]):
                xs = (b - a) / 2 * nodes + (a + b) / 2
                tot += (b - a) / 2 * np.sum(weights / self.lam(xs))
            out[i] = tot
        return out

    def Lambda_inv(self, v):
        lo, hi = self.lam_bounds()
        v = np.atleast_1d(np.asarray(v, dtype=float))
        out = np.empty_like(v)
        for i, vi in enumerate(v):
            if vi == 0:
                out[i] = 0.0
                continue
            span = abs(vi) * hi * 1.01 + 1e-12
            a, b = (0.0, span) if vi > 0 else (-span, 0.0)
            out[i] = brentq(lambda y: self.Lambda(y)[0] - vi, a, b, xtol=1e-14, rtol=1e-15)
        return out


# Hermite functions and block decomposition --------------------------------

def hermite_functions(N, x):
    """g_0..g_N at x by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    g = np.empty((N + 1, *x.shape))
    g[0] = np.pi ** -0.25 * np.exp(-x ** 2 / 2)
    if N >= 1:
        g[1] = np.sqrt(2) * x * g[0]
    for n in range(1, N):
        g[n + 1] = (np.sqrt(2) * x * g[n] - np.sqrt(n) * g[n - 1]) / np.sqrt(n + 1)
    return g


def hermite_scaled(N, x, h):
    """g_{n,h}(x) = h^{-1/4} g_n(x/sqrt(h))."""
    return hermite_functions(N, np.asarray(x) / np.sqrt(h)) / h ** 0.25


@dataclass
class HermiteBasis:
    x: np.ndarray
    g: np.ndarray
    N: int
    h: float = 1.0

    @property
    def dx(self):
        return self.x[1] - self.x[0]

    def gram(self):
        return self.g @ self.g.T * self.dx


def hermite_basis(N, x, h=1.0, tol=1e-12):
    """Sampled g_{n,h}, n <= N, on the uniform grid x."""
    x = np.asarray(x, dtype=float)
    g = hermite_scaled(N, x, h)
    edge = np.max(np.abs(g[:, [0, -1]])) * h ** 0.25
    if edge > tol:
        raise ResolutionError(f"grid too narrow for g_{N}: boundary value {edge:.2e}")
    return HermiteBasis(x, g, N, h)


def spectral_derivative(f, dx, order=1, axis=-1):
    n = f.shape[axis]
    k = 2 * np.pi * np.fft.fftfreq(n, d=dx)
    shape = [1] * f.ndim
    shape[axis] = n
    mult = (1j * k.reshape(shape)) ** order
    return np.fft.ifft(mult * np.fft.fft(f, axis=axis), axis=axis)


@dataclass
class BlockCoefficients:
    """f_n(x1) for n = 0..N; f[n] has shape (2, n1). f[0][1] is unused (zero)."""

    f: np.ndarray
    residual_mass: float
    warning: str = ""


def block_decompose(F, x2, h, N, dx1=1.0):
    """Coefficients of F = sum_n f_n (x) G_{n,h}.

    F has shape (2, n1, n2) with x2 the second grid axis. The first
    component pairs with g_{n,h}, the second with g_{n-1,h}.
    """
    F = np.asarray(F, dtype=complex)
    basis = hermite_scaled(N, x2, h)
    dx2 = x2[1] - x2[0]
    c1 = np.einsum("ij,nj->ni", F[0], basis) * dx2
    c2 = np.einsum("ij,nj->ni", F[1], basis) * dx2
    f = np.zeros((N + 1, 2, F.shape[1]), dtype=complex)
    f[:, 0] = c1
    f[1:, 1] = c2[:N]
    total = np.sum(np.abs(F) ** 2) * dx1 * dx2
    captured = np.sum(np.abs(f) ** 2) * dx1
    resid = float(total - captured)
    warn = f"residual mass {resid:.2e} above 1e-6" if resid > 1e-6 * max(total, 1e-300) else ""
    return BlockCoefficients(f, resid, warn)


def block_reconstruct(coeffs, x2, h):
    f = coeffs.f if isinstance(coeffs, BlockCoefficients) else np.asarray(coeffs)
    N = f.shape[0] - 1
    basis = hermite_scaled(N, x2, h)
    F = np.zeros((2, f.shape[2], len(x2)), dtype=complex)
    F[0] = np.einsum("ni,nj->ij", f[:, 0], basis)
    F[1] = np.einsum("ni,nj->ij", f[1:, 1], basis[:N])
    return F


def apply_model_2d(F, x1, x2, h, coeffs):
    """The model operator on a periodic (x1, x2) grid, pseudospectral."""
    F = np.asarray(F, dtype=complex)
    dx1, dx2 = x1[1] - x1[0], x2[1] - x2[0]
    lam, lam1 = coeffs.lam.derivatives(x1, 1)
    mu, mu1, mu2 = coeffs.mu.derivatives(x1, 2)
    s = coeffs.s(x1)
    col = lambda v: np.asarray(v)[:, None] * np.ones((1, len(x2)))
    lam, lam1, mu, mu1, mu2, s = map(col, (lam, lam1, mu, mu1, mu2, s))
    X2 = np.ones((len(x1), 1)) * x2[None, :]

    def D1(u):
        return -1j * spectral_derivative(u, dx1, axis=0)

    def d2(u):
        return spectral_derivative(u, dx2, axis=1)

    def diag_part(u):
        return (h * lam * D1(u) + h * lam1 / 2j * u + h ** 2 * D1(mu * D1(u))
                - h ** 2 * mu2 / 4 * u)

    def coupling(u):
        return lam * u + h * mu * D1(u) + h * mu1 / 2j * u

    out = np.empty_like(F)
    out[0] = diag_part(F[0]) + coupling(X2 * F[1] - h * d2(F[1])) + h * s * F[0]
    out[1] = -diag_part(F[1]) + coupling(X2 * F[0] + h * d2(F[0])) + h * s * F[1]
    return out


# one-dimensional blocks -----------------------------------------------------

@dataclass
class BlockOperator:
    """Generator of one block: d f/dt = -(i/scale) A f."""

    kind: str
    x: np.ndarray
    scale: float
    apply: object
    radius: float
    n: int = 0

    def rhs(self, f):
        return -1j / self.scale * self.apply(f)


def _sym_mult_D(c, f, dx):
    """(c D + D c)/2 applied to f, D = -i d/dx."""
    D = lambda u: -1j * spectral_derivative(u, dx)
    return 0.5 * (c * D(f) + D(c * f))


def block_operator(coeffs, x, kind, h=None, n=None, eps=None):
    """Pseudospectral L (kind 'L', needs h) or D_{n,eps} (kind 'D', needs n, eps)."""
    x = np.asarray(x, dtype=float)
    dx = x[1] - x[0]
    kmax = np.pi / dx
    lam = coeffs.lam(x) * np.ones_like(x)
    mu, mu1, mu2 = [v * np.ones_like(x) for v in coeffs.mu.derivatives(x, 2)]
    s = coeffs.s(x) * np.ones_like(x)
    D = lambda u: -1j * spectral_derivative(u, dx)
    lmax, mmax = np.max(np.abs(lam)), np.max(np.abs(mu))
    if kind == "L":
        if h is None:
            raise PreconditionError("L block needs h")

        def apply(f):
            return (h * _sym_mult_D(lam, f, dx) + h ** 2 * D(mu * D(f))
                    - h ** 2 * mu2 / 4 * f + h * s * f)

        radius = kmax * lmax + h * kmax ** 2 * mmax + h * np.max(np.abs(mu2)) / 4 + np.max(np.abs(s))
        return BlockOperator("L", x, h, apply, radius)
    if kind == "D":
        if n is None or eps is None or n < 1:
            raise PreconditionError("D block needs n >= 1 and eps")

        def apply(f):
            f = np.asarray(f)
            diag = (eps * _sym_mult_D(lam, f, dx) + 2 * n * eps ** 3 * D(mu * D(f))
                    - n * eps ** 3 * mu2 / 2 * f)
            off = lam * f + 2 * n * eps ** 2 * _sym_mult_D(mu, f, dx)
            out = np.empty_like(f, dtype=complex)
            out[0] = diag[0] + off[1] + eps * s * f[0]
            out[1] = -diag[1] + off[0] + eps * s * f[1]
            return out

        radius = (kmax * lmax + 2 * n * eps ** 2 * kmax ** 2 * mmax
                  + n * eps ** 2 * np.max(np.abs(mu2)) / 2
                  + (lmax + 2 * n * eps ** 2 * kmax * mmax + n * eps ** 2 * np.max(np.abs(mu1))) / eps
                  + np.max(np.abs(s)))
        return BlockOperator("D", x, eps, apply, radius, n)
    raise PreconditionError(f"unknown block kind {kind!r}")


RK4_IMAG_LIMIT = 2 * np.sqrt(2)


def max_stable_dt(op, safety=0.9):
    return safety * RK4_IMAG_LIMIT / op.radius


def evolve_block_1d(op, f0, t, dt=None, snapshots=None):
    """Classical RK4 for eps D_t f + A f = 0 (or h D_t f + L f = 0).

    Negative t evolves backward. Raises StepSizeError if |dt| exceeds the
    RK4 stability bound 0.9 * 2 sqrt(2) / rho(A/scale).
    """
    bound = max_stable_dt(op)
    if dt is None:
        dt = bound
    dt = abs(dt)
    if dt > bound:
        raise StepSizeError(f"dt={dt:.3e} exceeds the RK4 bound 0.9*2*sqrt(2)/rho = {bound:.3e}", bound)
    nsteps = max(1, int(np.ceil(abs(t) / dt)))
    step = t / nsteps
    f = np.array(f0, dtype=complex)
    snaps = []
    every = max(1, nsteps // snapshots) if snapshots else 0
    for k in range(nsteps):
        k1 = op.rhs(f)
        k2 = op.rhs(f + step / 2 * k1)
        k3 = op.rhs(f + step / 2 * k2)
        k4 = op.rhs(f + step * k3)
        f = f + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if every and (k + 1) % every == 0:
            snaps.append(((k + 1) * step, f.copy()))
    if snapshots:
        return f, snaps
    return f


def antiunitary(f, kind="sigma1"):
    """Antiunitary maps on 2-spinors: i s2 K, s3 K or s1 K.

    With mu = s = 0, s3 K anticommutes with D_{n,eps} and s1 K commutes
    with it; i s2 K does neither because the s3 eps D term commutes with it.
    """
    f = np.asarray(f)
    fc = np.conj(f)
    if kind == "i_sigma2":
        return np.array([-fc[1], fc[0]])
    if kind == "sigma3":
        return np.array([fc[0], -fc[1]])
    if kind == "sigma1":
        return np.array([fc[1], fc[0]])
    raise PreconditionError(f"unknown antiunitary kind {kind!r}")


# bicharacteristic flow ------------------------------------------------------

class Flow:
    """Flow of x' = lam sin z, z' = -lam' cos z with variations and integrals.

    State per sample: x, z, dx/dy, dz/dy, dx/dz0, dz/dz0, Q = int lam^2,
    P = int x' mu/lam^3, Sint = int s.
    """

    def __init__(self, coeffs, steps_per_unit=200):
        self.c = coeffs
        self.steps_per_unit = steps_per_unit
        self.lam_min, self.lam_max = coeffs.lam_bounds()
        if self.lam_min <= 0:
            raise PreconditionError("lam must be positive")

    def _rhs(self, st, T):
        x, z, xy, zy, xz, zz = st[:6]
        lam, l1, l2 = self.c.lam.derivatives(x, 2)
        sz, cz = np.sin(z), np.cos(z)
        xdot = lam * sz
        out = np.empty_like(st)
        out[0] = xdot
        out[1] = -l1 * cz
        out[2] = l1 * sz * xy + lam * cz * zy
        out[3] = -l2 * cz * xy + l1 * sz * zy
        out[4] = l1 * sz * xz + lam * cz * zz
        out[5] = -l2 * cz * xz + l1 * sz * zz
        out[6] = lam ** 2
        out[7] = 0.0 if self.c.mu_zero else xdot * self.c.mu(x) / lam ** 3
        out[8] = 0.0 if self.c.s_zero else self.c.s(x)
        return out * T

    def run(self, y, zeta, T, nsteps=None):
        """Integrate each sample to its own final time T (broadcast)."""
        y, zeta, T = np.broadcast_arrays(np.asarray(y, float), np.asarray(zeta, float), np.asarray(T, float))
        st = np.zeros((9, *y.shape))
        st[0], st[1] = y, zeta
        st[2], st[5] = 1.0, 1.0
        tmax = float(np.max(np.abs(T))) if T.size else 0.0
        if nsteps is None:
            nsteps = max(8, int(np.ceil(tmax * self.steps_per_unit)))
        h = 1.0 / nsteps
        for _ in range(nsteps):
            k1 = self._rhs(st, T)
            k2 = self._rhs(st + h / 2 * k1, T)
            k3 = self._rhs(st + h / 2 * k2, T)
            k4 = self._rhs(st + h * k3, T)
            st = st + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        return FlowState(*st)

    def run_snapshots(self, y, zeta, times, nsteps=None):
        """Integrate shared-time samples, returning the state at each time."""
        times = np.asarray(times, float)
        y, zeta = np.broadcast_arrays(np.asarray(y, float), np.asarray(zeta, float))
        st = np.zeros((9, *y.shape))
        st[0], st[1] = y, zeta
        st[2], st[5] = 1.0, 1.0
        out = {}
        t_now = 0.0
        for tk in sorted(set(times.tolist())):
            span = tk - t_now
            if span > 0:
                n = nsteps or max(4, int(np.ceil(span * self.steps_per_unit)))
                h = span / n
                for _ in range(n):
                    k1 = self._rhs(st, 1.0)
                    k2 = self._rhs(st + h / 2 * k1, 1.0)
                    k3 = self._rhs(st + h / 2 * k2, 1.0)
                    k4 = self._rhs(st + h * k3, 1.0)
                    st = st + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t_now = tk
            out[tk] = FlowState(*st.copy())
        return out

    def inverse(self, t, x, zeta, tol=1e-12, maxiter=30):
        """H with F(t, H, zeta) = x: safeguarded Newton in [x - t lam_max, x + t lam_max]."""
        t, x, zeta = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float), np.asarray(zeta, float))
        lo = x - np.abs(t) * self.lam_max - 1e-12
        hi = x + np.abs(t) * self.lam_max + 1e-12
        lam = self.c.lam(x)
        y = x - t * lam * np.sin(zeta)
        y = np.clip(y, lo, hi)
        for _ in range(maxiter):
            fs = self.run(y, zeta, t)
            r = fs.x - x
            # F is increasing in y on the validity window
            lo = np.where(r < 0, np.maximum(lo, y), lo)
            hi = np.where(r > 0, np.minimum(hi, y), hi)
            done = np.abs(r) < tol
            if np.all(done):
                return y, fs
            ynew = y - r / fs.xy
            bad = (ynew < lo) | (ynew > hi) | ~np.isfinite(ynew)
            y = np.where(done, y, np.where(bad, (lo + hi) / 2, ynew))
        fs = self.run(y, zeta, t)
        return y, fs


@dataclass
class FlowState:
    x: np.ndarray
    z: np.ndarray
    xy: np.ndarray
    zy: np.ndarray
    xz: np.ndarray
    zz: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    Sint: np.ndarray


@dataclass
class FlowField:
    t: np.ndarray
    x: np.ndarray
    zeta: np.ndarray
    F: np.ndarray          # (nt, nx, nz)
    G: np.ndarray          # zeta_t
    dF: np.ndarray         # dF/dx
    F_plus: np.ndarray     # (nt, nx) closed form Lambda^{-1}(Lambda(x) + t)
    F_minus: np.ndarray
    T_valid: float
    flow: Flow = None
    H: np.ndarray = None


def integrate_flow(coeffs, t_grid, x_grid, zeta_grid, steps_per_unit=200):
    """Forward flow tables on a (t, x, zeta) grid and the validity time."""
    flow = coeffs if isinstance(coeffs, Flow) else Flow(coeffs, steps_per_unit)
    t_grid = np.asarray(t_grid, float)
    x_grid = np.asarray(x_grid, float)
    zeta_grid = np.asarray(zeta_grid, float)
    Y, Z = np.meshgrid(x_grid, zeta_grid, indexing="ij")
    snaps = flow.run_snapshots(Y, Z, t_grid)
    F = np.array([snaps[t].x for t in t_grid])
    G = np.array([snaps[t].z for t in t_grid])
    dF = np.array([snaps[t].xy for t in t_grid])
    L0 = flow.c.Lambda(x_grid)
    Fp = np.array([flow.c.Lambda_inv(L0 + t) for t in t_grid])
    Fm = np.array([flow.c.Lambda_inv(L0 - t) for t in t_grid])
    ok = np.min(dF.reshape(len(t_grid), -1), axis=1) >= 0.5
    T_valid = float(t_grid[0])
    for t, good in zip(t_grid, ok):
        if not good:
            break
        T_valid = float(t)
    return FlowField(t_grid, x_grid, zeta_grid, F, G, dF, Fp, Fm, T_valid, flow)


def invert_flow(field_, tol=1e-9):
    """H(t, x, zeta) with F(t, H, zeta) = x on the table grid."""
    if np.max(field_.t) > field_.T_valid + 1e-14:
        raise ValidityError(f"table extends to t={np.max(field_.t)} past T_valid={field_.T_valid}")
    T, X, Z = np.meshgrid(field_.t, field_.x, field_.zeta, indexing="ij")
    H, fs = field_.flow.inverse(T, X, Z)
    resid = float(np.max(np.abs(fs.x - X)))
    if resid > tol:
        raise ValidityError(f"flow inversion residual {resid:.2e} above {tol}")
    field_.H = H
    return H


# eikonal phase ----------------------------------------------------------------

def _jbracket(xi):
    return np.sqrt(1 + xi ** 2)


@dataclass
class EikonalTable:
    t: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    phi: np.ndarray
    phi_x: np.ndarray
    phi_xi: np.ndarray
    phi_xixi: np.ndarray
    phi_t: np.ndarray
    H: np.ndarray
    dHdx: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    Sint: np.ndarray
    Xi: np.ndarray = None
    in_cone: np.ndarray = None
    cone: np.ndarray = None
    constants: dict = field(default_factory=dict)


def phase_quantities(flow, t, x, xi):
    """phi and its derivatives at arbitrary (t, x, xi) samples (broadcast).

    Uses H from the inverse flow and phi = H xi - Q / (lam(H) <xi>),
    dx phi = tan zeta_t, dxi phi = H, dxi^2 phi = -dxi F / dy F.
    """
    t, x, xi = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float), np.asarray(xi, float))
    zeta = np.arctan(xi)
    H, fs = flow.inverse(t, x, zeta)
    jb = _jbracket(xi)
    lamH = flow.c.lam(H)
    phi = H * xi - fs.Q / (lamH * jb)
    phi_x = np.tan(fs.z)
    lamx = flow.c.lam(x)
    dF_dxi = fs.xz * np.cos(zeta) ** 2
    return {
        "phi": phi,
        "phi_x": phi_x,
        "phi_xi": H,
        "phi_xixi": -dF_dxi / fs.xy,
        "phi_t": -lamx * _jbracket(phi_x),
        "H": H,
        "dHdx": 1.0 / fs.xy,
        "Q": fs.Q,
        "P": fs.P,
        "Sint": fs.Sint,
        "zeta_t": fs.z,
    }


def cone_interval(coeffs, t):
    """(x_t^-, x_t^+) = (Lambda^{-1}(-t), Lambda^{-1}(t))."""
    t = np.atleast_1d(np.asarray(t, float))
    return np.stack([coeffs.Lambda_inv(-t), coeffs.Lambda_inv(t)], axis=-1)


def critical_point(flow, t, x, tol=1e-12, maxiter=60):
    """Xi(t, x): the xi with H(t, x, xi) = 0, i.e. F(t, 0, xi) = x, for x in I_t.

    Returns (Xi, mask) with NaN outside the cone.
    """
    t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
    cone = cone_interval(flow.c, np.unique(t))
    lookup = {tt: c for tt, c in zip(np.unique(t), cone)}
    xm = np.vectorize(lambda tt: lookup[tt][0])(t) if t.size else t
    xp = np.vectorize(lambda tt: lookup[tt][1])(t) if t.size else t
    inside = (x > xm) & (x < xp) & (t > 0)
    lo = np.full(x.shape, -np.pi / 2)
    hi = np.full(x.shape, np.pi / 2)
    z = np.zeros(x.shape)
    for _ in range(maxiter):
        fs = flow.run(0.0, z, t)
        r = fs.x - x
        lo = np.where(r < 0, np.maximum(lo, z), lo)
        hi = np.where(r > 0, np.minimum(hi, z), hi)
        done = ~inside | (np.abs(r) < tol)
        if np.all(done):
            break
        znew = z - r / np.where(fs.xz == 0, 1e-300, fs.xz)
        bad = (znew < lo) | (znew > hi) | ~np.isfinite(znew)
        z = np.where(done, z, np.where(bad, (lo + hi) / 2, znew))
    Xi = np.where(inside, np.tan(z), np.nan)
    return Xi, inside


def _fd4(fun, v, step):
    return (-fun(v + 2 * step) + 8 * fun(v + step) - 8 * fun(v - step) + fun(v - 2 * step)) / (12 * step)


def solve_eikonal(coeffs, t_grid, x_grid, xi_grid, steps_per_unit=200, T_valid=None,
                  estimates=True):
    """Eikonal tables on a (t, x, xi) grid plus critical points and cone."""
    flow = coeffs if isinstance(coeffs, Flow) else Flow(coeffs, steps_per_unit)
    t_grid = np.asarray(t_grid, float)
    if T_valid is not None and np.max(t_grid) > T_valid + 1e-14:
        raise ValidityError(f"t={np.max(t_grid)} beyond T_valid={T_valid}")
    T, X, XI = np.meshgrid(t_grid, np.asarray(x_grid, float), np.asarray(xi_grid, float), indexing="ij")
    q = phase_quantities(flow, T, X, XI)
    Tx, Xx = np.meshgrid(t_grid, np.asarray(x_grid, float), indexing="ij")
    Xi, inside = critical_point(flow, Tx, Xx)
    cone = cone_interval(flow.c, t_grid)
    tab = EikonalTable(t_grid, np.asarray(x_grid, float), np.asarray(xi_grid, float),
                       q["phi"], q["phi_x"], q["phi_xi"], q["phi_xixi"], q["phi_t"],
                       q["H"], q["dHdx"], q["Q"], q["P"], q["Sint"], Xi, inside, cone)
    if estimates:
        tab.constants = eikonal_constants(tab)
    return tab


def eikonal_constants(tab):
    """Fitted constants in the concavity and non-stationary bounds."""
    T = tab.t[:, None, None]
    jb = _jbracket(tab.xi)[None, None, :]
    pos = (tab.t > 0)
    out = {}
    if np.any(pos):
        conc = -tab.phi_xixi[pos] * jb ** 3 / T[pos]
        out["concavity_c"] = float(np.min(conc))
        d = np.maximum(0, np.maximum(tab.cone[:, 0][:, None] - tab.x[None, :],
                                     tab.x[None, :] - tab.cone[:, 1][:, None]))[:, :, None]
        outside = (d > 0) & pos[:, None, None]
        outside = np.broadcast_to(outside, tab.phi_xi.shape)
        if np.any(outside):
            denom = np.broadcast_to(T / jb ** 2 + d, outside.shape)
            ratio = np.abs(tab.phi_xi[outside]) / denom[outside]
            out["nonstationary_c"] = float(np.min(ratio))
    return out


# WKB amplitudes -----------------------------------------------------------------

def u_vec(p):
    """Unit eigenvector of s1 + p s3 for the eigenvalue <p>."""
    th = np.pi / 2 - np.arctan(p)
    return np.array([np.cos(th / 2), np.sin(th / 2)])


def u_perp(p):
    """Unit eigenvector of s1 + p s3 for -<p>."""
    th = np.pi / 2 - np.arctan(p)
    return np.array([-np.sin(th / 2), np.cos(th / 2)])


@dataclass
class WKBAmplitude:
    alpha: np.ndarray
    u: np.ndarray
    b0: np.ndarray
    b1: np.ndarray
    n: int
    branch: int = 1

    def b(self, eps):
        return self.b0 + eps * self.b1


def alpha_from(n, xi, lamH, dHdx, P, Sint):
    return np.sqrt(np.abs(dHdx)) * np.exp(-2j * n * (1 + xi ** 2) * lamH ** 2 * P - 1j * Sint)


def _diff5(v, dx):
    """Fourth-order first derivative along the last axis (one-sided near ends)."""
    out = np.empty_like(v)
    out[..., 2:-2] = (-v[..., 4:] + 8 * v[..., 3:-1] - 8 * v[..., 1:-3] + v[..., :-4]) / (12 * dx)
    out[..., 0] = (-25 * v[..., 0] + 48 * v[..., 1] - 36 * v[..., 2] + 16 * v[..., 3] - 3 * v[..., 4]) / (12 * dx)
    out[..., 1] = (-3 * v[..., 0] - 10 * v[..., 1] + 18 * v[..., 2] - 6 * v[..., 3] + v[..., 4]) / (12 * dx)
    out[..., -1] = (25 * v[..., -1] - 48 * v[..., -2] + 36 * v[..., -3] - 16 * v[..., -4] + 3 * v[..., -5]) / (12 * dx)
    out[..., -2] = (3 * v[..., -1] + 10 * v[..., -2] - 18 * v[..., -3] + 6 * v[..., -4] - v[..., -5]) / (12 * dx)
    return out


def wkb_profiles(coeffs, n, x, xi, alpha, phi_x, branch=1):
    """b0 and b1 along a uniform x grid (last axis) at fixed (t, xi).

    ``phi_x`` is the x-derivative of the branch phase (phi for +, the
    reflected phase -phi(t, x, -xi) for -). Time derivatives come from the
    eikonal and transport equations, so only x-derivatives are taken:
    d_t p = -branch d_x(lam <p>) and
    d_t alpha = -(v d_x alpha + (d_x v / 2 + i s + 2 n i mu p branch <p>) alpha)
    with v = branch lam p / <p>.
    """
    dx = x[1] - x[0]
    lam, lam1 = coeffs.lam.derivatives(x, 1)
    mu = coeffs.mu(x) * np.ones_like(x)
    s = coeffs.s(x) * np.ones_like(x)
    p = phi_x
    jb = _jbracket(p)
    p_x = _diff5(p, dx)
    p_t = -branch * (lam1 * jb + lam * p * p_x / jb)
    th = np.pi / 2 - np.arctan(p)
    dth = -1.0 / jb ** 2
    if branch > 0:
        k, w = u_vec(p), u_perp(p)
        dk = 0.5 * w * dth
    else:
        k, w = u_perp(p), u_vec(p)
        dk = -0.5 * w * dth
    v = branch * lam * p / jb
    a_x = _diff5(alpha, dx)
    a_t = -(v * a_x + (_diff5(v, dx) / 2 + 1j * s + 2j * n * mu * p * branch * jb) * alpha)
    b0 = alpha * k
    b0_t = a_t * k + alpha * dk * p_t
    b0_x = a_x * k + alpha * dk * p_x
    sig3 = np.array([1.0, -1.0]).reshape(2, *([1] * (b0.ndim - 1)))
    Mb = np.array([b0[1], b0[0]]) + sig3 * b0 * p
    L1b = (-1j * b0_t + sig3 * (-1j * lam * b0_x + lam1 / 2j * b0)
           + 2 * n * mu * p * Mb + s * b0)
    proj = np.sum(w * L1b, axis=0)
    b1 = branch * proj * w / (2 * lam * jb)
    return b0, b1, np.sum(k * L1b, axis=0)


def transport_amplitude(tab, n, coeffs=None, branch=1):
    """WKB amplitude b = b0 + eps b1 on the grid of an EikonalTable.

    The table x grid must be uniform (b1 needs x-derivatives). Arrays are
    returned with shape (2, nt, nx, nxi) for b0, b1 and (nt, nx, nxi) for alpha.
    """
    if coeffs is None:
        raise PreconditionError("transport_amplitude needs the model coefficients")
    c = coeffs.c if isinstance(coeffs, Flow) else coeffs
    if len(tab.x) < 5 or not np.allclose(np.diff(tab.x), tab.x[1] - tab.x[0]):
        raise PreconditionError("transport_amplitude needs a uniform x grid with >= 5 points")
    xi = tab.xi[None, None, :]
    lamH = c.lam(tab.H)
    alpha = alpha_from(n, xi, lamH, tab.dHdx, tab.P, tab.Sint)
    # move xi in front of x so that x is the last axis for the profiles
    a_ = np.moveaxis(alpha, 2, 1)
    px = np.moveaxis(tab.phi_x, 2, 1)
    b0, b1, resid = wkb_profiles(c, n, tab.x, xi.reshape(1, -1, 1), a_, px, branch)
    b0 = np.moveaxis(b0, 3, 2)
    b1 = np.moveaxis(b1, 3, 2)
    k = u_vec(tab.phi_x) if branch > 0 else u_perp(tab.phi_x)
    return WKBAmplitude(alpha, k, b0, b1, n, branch)


# parametrix -----------------------------------------------------------------

@dataclass
class ParametrixResult:
    t: float
    x: np.ndarray
    quadrature: np.ndarray      # (2, nx)
    stationary: np.ndarray      # (2, nx), leading term inside the cone
    cone: tuple
    xi_step: float
    n_xi: int
    xi_max: float
    branches: dict = field(default_factory=dict)


def _xi_cutoff(a_hat, thresh=1e-12, xi_hi=60.0):
    xs = np.linspace(-xi_hi, xi_hi, 24001)
    v = np.max(np.abs(np.asarray(a_hat(xs))), axis=0)
    big = np.where(v > thresh)[0]
    if big.size == 0:
        raise PreconditionError("a_hat vanishes identically")
    xm = float(max(abs(xs[big[0]]), abs(xs[big[-1]]))) + 2 * (xs[1] - xs[0])
    if xm >= xi_hi:
        raise ResolutionError(f"a_hat does not decay below {thresh} for |xi| < {xi_hi}")
    return xm


def _branch_tables(flow, t, x, zeta, ny):
    """Quantities on (zeta node, x) for the + branch via forward tables and
    monotone Hermite inversion of y -> F(t, y, zeta)."""
    lam_max = flow.lam_max
    pad = t * lam_max + 0.05
    y = np.linspace(x.min() - pad, x.max() + pad, ny)
    Y, Z = np.meshgrid(y, zeta, indexing="ij")
    st = flow.run_snapshots(Y, Z, [t])[float(t)]
    nz = len(zeta)
    out = {k: np.empty((nz, len(x))) for k in ("H", "zt", "xy", "Q", "P", "Sint")}
    for j in range(nz):
        F = st.x[:, j]
        if np.any(np.diff(F) <= 0):
            raise ValidityError(f"flow not monotone in y at t={t}, zeta={zeta[j]:.3f}")
        H = CubicHermiteSpline(F, y, 1.0 / st.xy[:, j])(x)
        out["H"][j] = H
        for key, arr in (("zt", st.z), ("xy", st.xy), ("Q", st.Q), ("P", st.P), ("Sint", st.Sint)):
            out[key][j] = CubicSpline(y, arr[:, j])(H)
    return out


def evaluate_parametrix(coeffs, n, eps, a_hat, t, x, xi_max=None, order=1, n_zeta=129,
                        ny=300, steps_per_unit=200, max_samples=3e9, chunk=256,
                        stationary=True):
    """Oscillatory parametrix for eps D_t f + D_{n,eps} f = 0 with data eps^{-1/2} a(x/eps).

    Both branches are summed:

        E a(t, x) = (2 pi sqrt(eps))^{-1} sum_{+-} int e^{i phi_+-/eps} b_+-(t, x, xi)
                    (k_+-(xi) . a_hat(xi)) dxi

    with k_+ = u, k_- = u_perp, the - branch phase -phi(t, x, -xi). The
    integral is a trapezoid sum with step eps / (10 max |H|). The leading
    stationary-phase term inside the cone is returned alongside.

    Parameters
    ----------
    a_hat : callable
        xi -> complex array of shape (2, len(xi)), Fourier transform of a.
    """
    flow = coeffs if isinstance(coeffs, Flow) else Flow(coeffs, steps_per_unit)
    c = flow.c
    x = np.asarray(x, float)
    t = float(t)
    if t < 0:
        raise PreconditionError("evaluate_parametrix needs t >= 0")
    if xi_max is None:
        xi_max = _xi_cutoff(a_hat)
    edge = np.abs(np.asarray(a_hat(np.array([-xi_max, xi_max]))))
    if np.max(edge) > 1e-12:
        raise ResolutionError(f"a_hat is {np.max(edge):.2e} at the cutoff {xi_max}")
    Hmax = max(np.max(np.abs(x)) + t * flow.lam_max, 1.0)
    dxi_max = eps / (10 * Hmax)
    n_xi = 2 * int(np.ceil(xi_max / dxi_max)) + 1
    if n_xi * len(x) > max_samples:
        floor = eps * n_xi * len(x) / max_samples
        raise BudgetError(f"{n_xi} x {len(x)} quadrature samples exceed the budget "
                          f"{max_samples:.0e}; use eps >= {floor:.2e} or fewer x points")
    xi_f = np.linspace(-xi_max, xi_max, n_xi)
    dxi = xi_f[1] - xi_f[0]

    zm = np.arctan(xi_max) + 1e-3
    zeta = np.linspace(-zm, zm, n_zeta)
    xi_n = np.tan(zeta)[:, None]
    tb = _branch_tables(flow, t, x, zeta, ny)
    lamH = c.lam(tb["H"])
    R = tb["Q"] / lamH
    gam = lamH ** 2 * tb["P"]
    alpha = alpha_from(n, xi_n, lamH, 1.0 / tb["xy"], tb["P"], tb["Sint"])
    px = np.tan(tb["zt"])
    _, b1p, _ = wkb_profiles(c, n, x, xi_n, alpha, px, branch=1)
    # - branch on the mirrored nodes: p_-(xi) = -p_+(-xi), alpha_-(xi) = alpha_+(-xi)
    _, b1m, _ = wkb_profiles(c, n, x, -xi_n[::-1], alpha[::-1], -px[::-1], branch=-1)
    b1m = b1m[:, ::-1]          # b1_-(-zeta_j), aligned with + node j
    # real smooth quantities stacked for one spline in zeta:
    # H, R, gamma, Sint, |dH/dx|^{1/2}, zeta_t, then b1/alpha for both branches
    c1p, c1m = b1p / alpha, b1m / alpha
    stack = np.stack([tb["H"], R, gam, tb["Sint"], np.sqrt(np.abs(1.0 / tb["xy"])), tb["zt"],
                      c1p[0].real, c1p[0].imag, c1p[1].real, c1p[1].imag,
                      c1m[0].real, c1m[0].imag, c1m[1].real, c1m[1].imag], axis=1)
    spline = CubicSpline(zeta, stack, axis=0)

    ah = np.asarray(a_hat(xi_f), dtype=complex)
    ah_m = ah[:, ::-1]          # a_hat(-xi) on the symmetric grid
    w = np.full(n_xi, dxi)
    w[0] = w[-1] = dxi / 2
    wp = w * np.sum(u_vec(xi_f) * ah, axis=0)
    wm = w * np.sum(u_perp(-xi_f) * ah_m, axis=0)
    acc_p = np.zeros((2, len(x)), complex)
    acc_m = np.zeros((2, len(x)), complex)
    for s0 in range(0, n_xi, chunk):
        sl = slice(s0, min(n_xi, s0 + chunk))
        xi = xi_f[sl][:, None]
        q = spline(np.arctan(xi_f[sl]))
        H, R_, g_, Si, ax, zt = (q[:, k] for k in range(6))
        jb = _jbracket(xi)
        phi = H * xi - R_ / jb
        al = ax * np.exp(-1j * (2 * n * jb ** 2 * g_ + Si))
        ep = np.exp(1j * phi / eps)
        ap = al * ep
        am = al * np.conj(ep)
        # + branch at xi with k = u; - branch at -xi with p_- = -p and k = u_perp
        # p = tan(zeta_t), so theta = pi/2 - zeta_t; theta(-p) = pi - theta(p)
        th = np.pi / 2 - zt
        cs, sn = np.cos(th / 2), np.sin(th / 2)
        vp = (cs, sn)
        vm = (-cs, sn)
        for comp in range(2):
            bp = vp[comp]
            bm = vm[comp]
            if order >= 1:
                bp = bp + eps * (q[:, 6 + 2 * comp] + 1j * q[:, 7 + 2 * comp])
                bm = bm + eps * (q[:, 10 + 2 * comp] + 1j * q[:, 11 + 2 * comp])
            acc_p[comp] += wp[sl] @ (ap * bp)
            acc_m[comp] += wm[sl] @ (am * bm)
    pref = 1.0 / (2 * np.pi * np.sqrt(eps))
    acc_p *= pref
    acc_m *= pref
    cone = tuple(cone_interval(c, t)[0]) if t > 0 else (0.0, 0.0)
    st = np.zeros((2, len(x)), complex)
    if stationary and t > 0:
        st = _stationary_term(flow, n, eps, a_hat, t, x, xi_max)
    res = ParametrixResult(t, x, acc_p + acc_m, st, cone, dxi, n_xi, xi_max,
                           {"+": acc_p, "-": acc_m})
    return res


def _stationary_term(flow, n, eps, a_hat, t, x, xi_max):
    """Leading stationary-phase term of both branches (zero outside the cone)."""
    c = flow.c
    Xi, inside = critical_point(flow, np.full(x.shape, t), x)
    ok = inside & (np.abs(Xi) < xi_max)
    Xs = np.where(ok, Xi, 0.0)
    zeta = np.arctan(Xs)
    fs = flow.run(np.zeros_like(x), zeta, np.full(x.shape, t))
    jb = _jbracket(Xs)
    lam0 = c.lam(0.0)
    phi = -fs.Q / (lam0 * jb)
    phi2 = -fs.xz * np.cos(zeta) ** 2 / fs.xy
    al = alpha_from(n, Xs, lam0, 1.0 / fs.xy, fs.P, fs.Sint)
    p = np.tan(fs.z)
    amp = 1.0 / np.sqrt(2 * np.pi * np.abs(phi2))
    ahp = np.asarray(a_hat(Xs), dtype=complex)
    ahm = np.asarray(a_hat(-Xs), dtype=complex)
    plus = (np.exp(-1j * np.pi / 4) * np.exp(1j * phi / eps) * amp * al
            * np.sum(u_vec(Xs) * ahp, axis=0) * u_vec(p))
    minus = (np.exp(1j * np.pi / 4) * np.exp(-1j * phi / eps) * amp * al
             * np.sum(u_perp(-Xs) * ahm, axis=0) * u_perp(-p))
    return np.where(ok, plus + minus, 0.0)
