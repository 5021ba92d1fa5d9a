"""Edge trajectories, slow coefficients and traveling envelopes."""

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import (AliasingError, GapCollapseError, PreconditionError,
                     ResolutionError)
from .grid import Grid2, SpinorField
from .symbol_core import (as_z, edge_vector_field, eigenlines, lambda_gap,
                          poisson_vector)

GAP_STOP = 1e-6


@dataclass
class EdgeTrajectory:
    t: np.ndarray
    z: np.ndarray            # (n, 4)
    residual: np.ndarray     # max |p_j| at each sample
    arc: np.ndarray          # arclength of the position projection
    error: str = ""

    @property
    def x(self):
        return self.z[:, :2]

    @property
    def xi(self):
        return self.z[:, 2:]

    def at(self, t):
        """Linear interpolation of the trajectory at time t."""
        return np.array([np.interp(t, self.t, self.z[:, k]) for k in range(4)])


@dataclass
class SlowCoefficients:
    t: np.ndarray
    lam: np.ndarray
    rho: np.ndarray
    nu: np.ndarray
    S: np.ndarray

    def at(self, t):
        return (float(np.interp(t, self.t, self.rho)),
                float(np.interp(t, self.t, self.nu)),
                float(np.interp(t, self.t, self.S)))


@dataclass
class EnvelopeState:
    t: float
    rho: float
    nu: float
    S: float
    y: np.ndarray
    a: np.ndarray

    def norm(self):
        dy = self.y[1] - self.y[0]
        return float(np.sqrt(np.sum(np.abs(self.a) ** 2) * dy))


@dataclass
class WavepacketSpec:
    """Wavepacket concentrated at (x_star, xi_star).

    ``envelope`` maps (y1, y2) arrays to complex values; the default is the
    L2-normalized Gaussian pi^{-1/2} exp(-|y|^2/2).
    """

    x_star: tuple = (0.0, 0.0)
    xi_star: tuple = (0.0, 0.0)
    envelope: object = None
    u: tuple = (1.0, 0.0)
    phase: float = 0.0
    extra: dict = field(default_factory=dict)


def gaussian_envelope(y1, y2):
    return np.exp(-(y1 ** 2 + y2 ** 2) / 2) / np.sqrt(np.pi)


def _project(sym, z, iters=2):
    for _ in range(iters):
        p = sym(z)
        if np.max(np.abs(p)) < 1e-14:
            break
        z = z - np.linalg.pinv(sym.grad(z)) @ p
    return z


def integrate_edge_ode(sym, z0, T, dt):
    """RK4 for dz/dt = V(z) with a Gauss-Newton projection onto p = 0 after each step.

    On gap collapse or projection failure the trajectory is truncated and
    ``error`` says why.
    """
    z = as_z(z0).copy()
    if T < 0 or dt <= 0:
        raise PreconditionError("need T >= 0 and dt > 0")
    n = int(round(T / dt))
    if n == 0 and T > 0:
        n = 1
    dt = T / n if n else dt

    def V(w):
        if lambda_gap(sym, w) < GAP_STOP:
            raise GapCollapseError(f"gap below {GAP_STOP} at {w.tolist()}")
        return edge_vector_field(sym, w)

    ts, zs, res = [0.0], [z.copy()], [float(np.max(np.abs(sym(z))))]
    error = ""
    for k in range(n):
        try:
            k1 = V(z)
            k2 = V(z + dt / 2 * k1)
            k3 = V(z + dt / 2 * k2)
            k4 = V(z + dt * k3)
            z = z + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            z = _project(sym, z)
            r = float(np.max(np.abs(sym(z))))
            if not np.isfinite(r) or r > 1e-6:
                error = f"projection failed at t={(k + 1) * dt:.6g} (residual {r:.3e})"
                break
        except GapCollapseError as exc:
            error = str(exc)
            break
        ts.append((k + 1) * dt)
        zs.append(z.copy())
        res.append(r)
    zs = np.array(zs)
    steps = np.linalg.norm(np.diff(zs[:, :2], axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(steps)])
    return EdgeTrajectory(np.array(ts), zs, np.array(res), arc, error)


def model_trajectory(lam, T, dt, x0=0.0):
    """Integral curve of x' = lam(x) (the straightened edge), RK4.

    Returns an EdgeTrajectory with points (x, 0, 0, 0).
    """
    n = max(1, int(round(T / dt)))
    dt = T / n
    x = float(x0)
    xs = [x]
    for _ in range(n):
        k1 = lam(x)
        k2 = lam(x + dt / 2 * k1)
        k3 = lam(x + dt / 2 * k2)
        k4 = lam(x + dt * k3)
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        xs.append(float(x))
    xs = np.array(xs)
    z = np.zeros((n + 1, 4))
    z[:, 0] = xs
    t = np.linspace(0, T, n + 1)
    return EdgeTrajectory(t, z, np.zeros(n + 1), np.abs(xs - xs[0]))


def _sample(fn, z, default):
    if fn is None:
        return np.full(len(z), float(default))
    if np.isscalar(fn):
        return np.full(len(z), float(fn))
    return np.asarray(fn(z.T), dtype=float) * np.ones(len(z))


def model_coefficients_along_edge(traj, sym=None, lam=None, mu=0.0, s=0.0):
    """rho_t = lam(x_t)/lam(x_0), nu_t = int mu/rho^2, S_t = int s.

    ``lam``, ``mu`` and ``s`` are constants or callables of z with shape
    (4, n). If ``lam`` is omitted it is lambda_gap of ``sym`` along the
    trajectory. mu and s default to 0: they are not determined by the
    linear theory.
    """
    if lam is None:
        if sym is None:
            raise PreconditionError("need either a symbol or a lambda function")
        lv = np.array([lambda_gap(sym, z) for z in traj.z])
    else:
        lv = _sample(lam, traj.z, 1.0)
    if lv[0] <= 0:
        raise PreconditionError("lambda vanishes at the start of the edge")
    rho = lv / lv[0]
    muv = _sample(mu, traj.z, 0.0)
    sv = _sample(s, traj.z, 0.0)
    nu = cumulative_trapezoid(muv / rho ** 2, traj.t, initial=0.0)
    S = cumulative_trapezoid(sv, traj.t, initial=0.0)
    return SlowCoefficients(traj.t, lv, rho, nu, S)


def _trig_eval(coef, k, pts, chunk=512):
    out = np.empty(len(pts), dtype=complex)
    for i in range(0, len(pts), chunk):
        out[i:i + chunk] = np.exp(1j * np.outer(pts[i:i + chunk], k)) @ coef
    return out


def dilate(y, b, rho, tol=1e-8):
    """Samples of y -> b(y/rho), b given on the uniform periodic grid y.

    The trigonometric interpolant of b on a twice larger, zero-padded box is
    evaluated at y/rho.
    """
    N = len(y)
    dy = y[1] - y[0]
    if rho == 1.0:
        return np.asarray(b, dtype=complex).copy()
    # zero-pad in space to a box twice as long
    pad = np.zeros(2 * N, dtype=complex)
    pad[N // 2:N // 2 + N] = b
    y0 = y[0] - (N // 2) * dy
    k = 2 * np.pi * np.fft.fftfreq(2 * N, d=dy)
    coef = np.fft.fft(pad) / (2 * N)
    # y/rho must stay in the padded box and the stretched spectrum below Nyquist
    if rho < 1:
        kmax = np.pi / dy
        hi = np.abs(k) > rho * kmax
        total = np.sum(np.abs(coef) ** 2)
        if total > 0 and np.sum(np.abs(coef[hi]) ** 2) > tol * total:
            raise AliasingError(f"dilation by rho={rho:.4g} pushes spectral mass past Nyquist")
    pts = y / rho - y0
    return _trig_eval(coef, k, pts)


def evolve_envelope(y, a0, rho, nu, S, t=0.0, tol=1e-8):
    """Envelope a_t with hat a_t(k) = sqrt(rho) exp(-iS - i nu rho^2 k^2) hat a_0(rho k).

    The phase of S follows from (D_t + s) a = 0.
    """
    y = np.asarray(y, dtype=float)
    a0 = np.asarray(a0, dtype=complex)
    if rho <= 0:
        raise PreconditionError("rho must be positive")
    edge = max(abs(a0[0]), abs(a0[-1]))
    if edge > 1e-8 * max(np.max(np.abs(a0)), 1e-300):
        raise ResolutionError("initial envelope does not decay at the box boundary")
    dy = y[1] - y[0]
    k = 2 * np.pi * np.fft.fftfreq(len(y), d=dy)
    b = np.fft.ifft(np.exp(-1j * nu * k ** 2) * np.fft.fft(a0)) if nu != 0 else a0.copy()
    a = np.exp(-1j * S) / np.sqrt(rho) * dilate(y, b, rho, tol)
    return EnvelopeState(float(t), float(rho), float(nu), float(S), y, a)


def synthesize_wavepacket(spec, h, grid):
    """h^{-1/2} e^{i s + i xi*.(x - x*)/h} A((x - x*)/sqrt(h)) u on a periodic grid."""
    if h <= 0:
        raise PreconditionError("h must be positive")
    if not grid.check_resolves(np.sqrt(h)):
        raise ResolutionError(f"grid spacing {max(grid.dx):.4g} does not resolve sqrt(h)/8 = {np.sqrt(h) / 8:.4g}")
    d1, d2 = grid.displacement(spec.x_star)
    env = spec.envelope or gaussian_envelope
    A = env(d1 / np.sqrt(h), d2 / np.sqrt(h))
    phase = np.exp(1j * spec.phase + 1j * (spec.xi_star[0] * d1 + spec.xi_star[1] * d2) / h)
    amp = A * phase / np.sqrt(h)
    u = np.asarray(spec.u, dtype=complex)
    return SpinorField(u[:, None, None] * amp[None], grid, h)


def predicted_packet(sym, z_t, h, grid, envelope=None, phase=0.0):
    """Traveling packet at the edge point z_t of a domain-wall type symbol.

    Built in the tangent/normal frame of the interface at x_t: envelope
    ``envelope(s)`` along the edge (scaled variable s = tangent/sqrt(h)),
    ground state of width sqrt(h/|grad m|) across, orientation L^-(z_t).
    """
    z_t = as_z(z_t)
    V = edge_vector_field(sym, z_t)
    tang = V[:2] / np.linalg.norm(V[:2])
    normal = np.array([tang[1], -tang[0]])
    c = lambda_gap(sym, z_t) ** 2
    d1, d2 = grid.displacement(z_t[:2])
    s = (tang[0] * d1 + tang[1] * d2) / np.sqrt(h)
    r = (normal[0] * d1 + normal[1] * d2) / np.sqrt(h)
    if envelope is None:
        def envelope(y):
            return np.pi ** -0.25 * np.exp(-y ** 2 / 2)
    gam = (c / np.pi) ** 0.25 * np.exp(-c * r ** 2 / 2)
    amp = envelope(s) * gam / np.sqrt(h) * np.exp(1j * phase)
    vm, _ = eigenlines(sym, z_t)
    return SpinorField(vm.v[:, None, None] * amp[None], grid, h)


def predicted_speed(kind, grad_m=(0.0, 1.0), B=0.0, metric_grad_norm=None, dxi_norm=None):
    """Closed-form edge speeds.

    plain: 1; magnetic: |grad m| / sqrt(|grad m|^2 + B^2);
    strained: |grad_g m|_g / sqrt(|grad_g m|_g^2 + |dxi|_g^2).
    """
    if kind == "plain":
        if np.linalg.norm(grad_m) == 0:
            raise PreconditionError("grad m vanishes")
        return 1.0
    if kind == "magnetic":
        g = float(np.linalg.norm(grad_m))
        if g == 0:
            raise PreconditionError("grad m vanishes")
        return g / np.hypot(g, B)
    if kind in ("strained", "curved"):
        if metric_grad_norm is None or dxi_norm is None:
            raise PreconditionError("strained speed needs metric data")
        if not np.isfinite(metric_grad_norm) or metric_grad_norm <= 0:
            raise PreconditionError("degenerate metric gradient")
        return float(metric_grad_norm / np.hypot(metric_grad_norm, dxi_norm))
    raise PreconditionError(f"unknown model kind {kind!r}")


def edge_velocity(sym, z):
    """Position part of V at z."""
    return edge_vector_field(sym, z)[:2]


def bracket_vector(sym, z):
    return poisson_vector(sym, z)
