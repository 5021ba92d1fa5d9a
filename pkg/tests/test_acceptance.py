"""Acceptance criteria AC1-AC9. Each test prints one PASS/FAIL line."""

import time

import numpy as np
import pytest

from dirac_edge import edge_dynamics as ed
from dirac_edge import haldane_lab as hl
from dirac_edge import model_solver as ms
from dirac_edge import pde_solver as ps
from dirac_edge import symbol_core as sc
from dirac_edge import symplectic_reduction as sr
from dirac_edge.grid import Grid2

TANH_LAM = "1+0.3*tanh(x)"


def gauss(y):
    return np.pi ** -0.25 * np.exp(-y ** 2 / 2) + 0j


def gauss_hat(k):
    return np.array([np.pi ** -0.25 * np.sqrt(2 * np.pi) * np.exp(-k ** 2 / 2) + 0j, 0 * k + 0j])


def l2(f, dx):
    return float(np.sqrt(np.sum(np.abs(f) ** 2) * dx))


# AC1 --------------------------------------------------------------------------------------

def test_ac1_normal_form_suite(report):
    rng = np.random.default_rng(2024)
    worst = {"normal_form": 0.0, "symplectic": 0.0, "su2": 0.0, "lambda": 0.0}
    t0 = time.perf_counter()
    for k in range(200):
        sym = sr.random_linear_symbol(rng)
        nf = sr.reduce_linear_symbol(sym)
        res = sr.verify_normal_form(sym, *nf, seed=k)
        # independent lambda: brackets of the linear rows, {p_i, p_j} = C_i^T J C_j up to sign
        C = sym.C
        M = np.array([C[1] @ sc.J4 @ C[2], C[2] @ sc.J4 @ C[0], C[0] @ sc.J4 @ C[1]])
        lam = np.sqrt(np.linalg.norm(M))
        worst["normal_form"] = max(worst["normal_form"], res["normal_form"] / max(1.0, nf.lam))
        worst["symplectic"] = max(worst["symplectic"], res["symplectic"])
        worst["su2"] = max(worst["su2"], res["su2"])
        worst["lambda"] = max(worst["lambda"], abs(nf.lam - lam) / max(1.0, lam))
    elapsed = time.perf_counter() - t0
    ok = (worst["normal_form"] < 1e-9 and worst["symplectic"] < 1e-9 and worst["su2"] < 1e-10
          and worst["lambda"] < 1e-9 and elapsed < 5)
    report("AC1", ok, f"normal form {worst['normal_form']:.1e}, S^TJS-J {worst['symplectic']:.1e}, "
                      f"|det U-1| {worst['su2']:.1e}, lambda {worst['lambda']:.1e}, {elapsed:.2f}s")
    assert ok


# AC2-AC4: direct 2D simulations ----------------------------------------------------------------

def run_packet(h, L, N, T, orientation=0, B=0.0, snapshots=10):
    g = Grid2((L, L), (N, N))
    A = ps.periodic_gauge(L, B) if B else ("0", "0")
    model = ps.PDEModel(ps.periodic_wall(L), A)
    sym = model.symbol()
    z0 = np.zeros(4)
    v = sc.eigenlines(sym, z0)[orientation].v
    if B:
        psi0 = ps.magnetic_edge_packet(B, h, g, v)
    else:
        psi0 = ed.synthesize_wavepacket(ed.WavepacketSpec(u=v), h, g)
    ev = ps.evolve(model, psi0, h, T, snapshots=snapshots)
    obs = [ps.observables(f, model) for f in ev.snapshots]
    return g, model, sym, ev, obs


def test_ac2_edge_transport(report):
    h, L, N, T = 0.02, 4.0, 256, 0.5
    g, model, sym, ev, obs = run_packet(h, L, N, T)
    centers = np.array([o["center_of_mass"] for o in obs])
    v = ps.fit_velocity(ev.times, centers)
    drift = float(np.max(np.abs(centers[:, 1])))
    tr = ed.integrate_edge_ode(sym, np.zeros(4), T, 0.01)
    pred = ed.predicted_packet(sym, tr.z[-1], h, g)
    overlap = ps.compare_to_prediction(ev.final, pred)["overlap"][0]
    V = sc.edge_vector_field(sym, np.zeros(4))[:2]
    same_dir = np.dot(v, V) > 0
    speed = np.hypot(*v)
    ok = abs(speed - 1) < 0.03 and drift < 2 * np.sqrt(h) and overlap > 0.9 and same_dir
    report("AC2", ok, f"speed {speed:.5f} (v = {v[0]:+.5f}, {v[1]:+.1e}), drift {drift:.1e} "
                      f"< {2 * np.sqrt(h):.3f}, overlap {overlap:.4f}, direction of V: {same_dir}")
    assert ok


def test_ac3_collapse_scaling(report):
    T = 0.3
    vals, mass = {}, []
    for h, N in ((0.04, 128), (0.01, 256)):
        _, _, _, ev, obs = run_packet(h, 3.2, N, T, orientation=1, snapshots=3)
        vals[h] = obs[-1]["linf"] * h ** 0.25
        mass.append(float(np.max(np.abs(ev.mass - ev.mass[0]))))
    ratio = vals[0.04] / vals[0.01]
    ok = abs(ratio - 1) < 0.25 and max(mass) < 1e-5
    report("AC3", ok, f"Linf h^(1/4): {vals[0.04]:.4f} (h=0.04), {vals[0.01]:.4f} (h=0.01), "
                      f"ratio {ratio:.3f}, mass drift {max(mass):.1e}")
    assert ok


def test_ac4_magnetic_speed(report):
    out = []
    for B in (1.0, 2.0):
        _, _, _, ev, obs = run_packet(0.02, 4.0, 256, 0.5, B=B)
        v = ps.fit_velocity(ev.times, [o["center_of_mass"] for o in obs])
        target = 1 / np.hypot(1, B)
        out.append((B, float(np.hypot(*v)), target))
    ok = all(abs(s / t - 1) < 0.05 for _, s, t in out)
    report("AC4", ok, ", ".join(f"B={B:g}: {s:.5f} vs {t:.5f}" for B, s, t in out))
    assert ok


# AC5: traveling-mode formula --------------------------------------------------------------------

def test_ac5_traveling_mode_formula(report):
    c = ms.ModelCoefficients1D(TANH_LAM, "0", "0")
    T = 0.5
    tr = ed.model_trajectory(c.lam, T, 1e-3)
    co = ed.model_coefficients_along_edge(tr, lam=lambda z: c.lam(z[0]))
    xt, rho = tr.z[-1, 0], co.rho[-1]
    yy = np.linspace(-20, 20, 2048)
    env = ed.evolve_envelope(yy, gauss(yy), rho, 0.0, 0.0, T)
    x = np.linspace(-4, 4, 2048, endpoint=False)
    dx = x[1] - x[0]
    errs = []
    for h in (0.02, 0.01, 0.005, 0.0025):
        f0 = gauss(x / np.sqrt(h)) / h ** 0.25
        op = ms.block_operator(c, x, "L", h=h)
        f = ms.evolve_block_1d(op, f0, T, dt=ms.max_stable_dt(op) / 2)
        s = (x - xt) / np.sqrt(h)
        pred = (np.interp(s, yy, env.a.real) + 1j * np.interp(s, yy, env.a.imag)) / h ** 0.25
        errs.append(l2(f - pred, dx))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    ok = bool(np.all(np.abs(ratios / np.sqrt(2) - 1) < 0.3))
    report("AC5", ok, "L2 errors " + ", ".join(f"{e:.2e}" for e in errs)
           + "; ratios " + ", ".join(f"{r:.4f}" for r in ratios) + " vs sqrt 2")
    assert ok


# AC6: model dispersion ----------------------------------------------------------------------------

def test_ac6_model_dispersion(report):
    eps = 0.01
    x = np.linspace(-1.6, 1.6, 512, endpoint=False)
    flow = ms.Flow(ms.ModelCoefficients1D(TANH_LAM, "0.1", "0"))
    times = (0.1, 0.2, 0.4, 0.8)
    spreads, worst_out, worst_lead = [], 0.0, 0.0
    for n in (1, 4):
        vals = []
        for t in times:
            r = ms.evaluate_parametrix(flow, n, eps, gauss_hat, t, x)
            dens = np.sum(np.abs(r.quadrature) ** 2, axis=0)
            vals.append(np.sqrt(np.max(dens)) * np.sqrt(t))
            lo, hi = r.cone
            out = (x < lo - 3 * np.sqrt(eps)) | (x > hi + 3 * np.sqrt(eps))
            worst_out = max(worst_out, float(np.sum(dens[out]) / np.sum(dens)))
            sd = np.sum(np.abs(r.stationary) ** 2, axis=0)
            worst_lead = max(worst_lead, float(np.sum(sd[out]) / np.sum(sd)))
        spreads.append((n, vals))
    ok = all(max(v) / min(v) <= 2 for _, v in spreads) and worst_out < 1e-3 and worst_lead < 1e-3
    report("AC6", ok, "; ".join(f"n={n}: sup*sqrt(t) " + ", ".join(f"{v:.3f}" for v in vals)
                                for n, vals in spreads)
           + f"; mass outside cone {worst_out:.1e} (leading term {worst_lead:.1e})")
    assert ok


# AC7: parametrix vs direct solve ------------------------------------------------------------------

@pytest.mark.xfail(strict=True, reason="observed error is O(eps), ratio 2 under eps-halving (see ledger)")
def test_ac7_parametrix_consistency(report):
    c = ms.ModelCoefficients1D(TANH_LAM, "0.1", "0")
    n, t = 3, 0.5
    errs, scaled = [], []
    for eps, N in ((0.02, 1024), (0.01, 2048), (0.005, 2048)):
        x = np.linspace(-2, 2, N, endpoint=False)
        dx = x[1] - x[0]
        f0 = np.array([gauss(x / eps), 0 * x]) / np.sqrt(eps)
        op = ms.block_operator(c, x, "D", n=n, eps=eps)
        f = ms.evolve_block_1d(op, f0, t, dt=ms.max_stable_dt(op) / 8)
        r = ms.evaluate_parametrix(c, n, eps, gauss_hat, t, x)
        errs.append(l2(f - r.quadrature, dx))
        scaled.append(errs[-1] / np.sqrt(eps))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    ok = bool(np.all(np.abs(ratios / np.sqrt(2) - 1) < 0.3))
    bound_ok = scaled[-1] <= scaled[0]
    report("AC7", ok, "L2 errors " + ", ".join(f"{e:.2e}" for e in errs)
           + "; ratios " + ", ".join(f"{r:.3f}" for r in ratios)
           + f" vs sqrt 2; error/eps^(1/2) non-increasing: {bound_ok}")
    assert ok


# AC8: eikonal closed form ---------------------------------------------------------------------------

def test_ac8_eikonal_closed_form(report):
    flat = ms.ModelCoefficients1D("1")
    t, x, xi = np.linspace(0, 0.5, 11), np.linspace(-2, 2, 41), np.linspace(-10, 10, 81)
    tab = ms.solve_eikonal(flat, t, x, xi)
    T, X, XI = np.meshgrid(t, x, xi, indexing="ij")
    phi_err = float(np.max(np.abs(tab.phi - (X * XI - T * np.sqrt(1 + XI ** 2)))))

    # H o F = id on random samples, for the flat and a varying speed
    rng = np.random.default_rng(8)
    tt, xx = rng.uniform(0, 0.5, 400), rng.uniform(-2, 2, 400)
    zz = np.arctan(rng.uniform(-10, 10, 400))
    inv_err, dphi_err = 0.0, 0.0
    for coeffs in (flat, ms.ModelCoefficients1D(TANH_LAM)):
        flow = ms.Flow(coeffs)
        fs = flow.run(xx, zz, tt)
        Hx, _ = flow.inverse(tt, fs.x, zz)
        inv_err = max(inv_err, float(np.max(np.abs(Hx - xx))))
        # d phi / d xi = H by a fourth-order difference
        k, d = np.tan(zz), 1e-3
        phi = lambda kk: ms.phase_quantities(flow, tt, xx, kk)["phi"]
        dphi = (-phi(k + 2 * d) + 8 * phi(k + d) - 8 * phi(k - d) + phi(k - 2 * d)) / (12 * d)
        H = ms.phase_quantities(flow, tt, xx, k)["H"]
        dphi_err = max(dphi_err, float(np.max(np.abs(dphi - H))))
    ok = phi_err < 1e-6 and inv_err < 1e-7 and dphi_err < 1e-7
    report("AC8", ok, f"phi error {phi_err:.1e}, H o F - id {inv_err:.1e}, d_xi phi - H {dphi_err:.1e}")
    assert ok


# AC9: Haldane constants -------------------------------------------------------------------------------

def test_ac9_haldane_constants(report):
    conv = hl.resolve_convention()["convention"]
    model = hl.BlochHamiltonian(convention=conv)
    xi = hl.find_dirac_point(model).xi
    w = abs(model.omega(xi))
    beta = float(model.beta(xi))
    rng = np.random.default_rng(9)
    speeds = []
    for _ in range(100):
        s12, s21 = (float(v) for v in rng.uniform(-0.3, 0.3, 2))
        q1, q2 = (float(v) for v in rng.uniform(-2, 2, 2))
        q2 = q2 if abs(q2 - q1) > 0.05 else q2 + 0.1
        strain = hl.StrainField(("1", repr(s12)), (repr(s21), "1"), (f"{q1!r}*x2", f"{q2!r}*x1"))
        out = hl.edge_speed_strained(strain, (0.0, 0.0))
        assert out["dxi_g"] > 0
        speeds.append(out["speed"])
    ok = w < 1e-12 and abs(beta - 3 * np.sqrt(3) / 2) < 1e-9 and max(speeds) < 1
    report("AC9", ok, f"|omega| {w:.1e} ({conv} momenta), beta {beta:.12f}, "
                      f"strained speeds in [{min(speeds):.3f}, {max(speeds):.3f}]")
    assert ok


@pytest.mark.xfail(strict=True, reason="cone coefficient modulus is 1 (lattice) or sqrt 3/2, never sqrt 3/4")
def test_ac9_cone_coefficient(report):
    conv = hl.resolve_convention()["convention"]
    model = hl.BlochHamiltonian(convention=conv)
    cone = hl.extract_cone(model, hl.find_dirac_point(model))
    mags = np.abs(cone.alpha)
    cart = np.abs(hl.cartesian_cone(cone))
    ok = bool(np.all(np.abs(mags - np.sqrt(3) / 4) < 1e-6))
    report("AC9.cone", ok, f"component magnitudes {mags.round(12)} ({conv}), {cart.round(12)} (Cartesian) "
                           f"vs sqrt 3/4 = {np.sqrt(3) / 4:.6f}")
    assert ok
