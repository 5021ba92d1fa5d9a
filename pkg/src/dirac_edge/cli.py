"""dirac-edge: run scenario files through the analysis pipelines.

Exit status: 0 on success, 2 for malformed or schema-violating scenarios,
3 for numerical failures (a diagnostic JSON is written next to the outputs).
"""

import argparse
import contextlib
import hashlib
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from importlib import resources

import jsonschema
import numpy as np

from . import __version__
from . import edge_dynamics as ed
from . import haldane_lab as hl
from . import model_solver as ms
from . import pde_solver as ps
from . import symbol_core as sc
from . import symplectic_reduction as sr
from .errors import DiracEdgeError, SchemaError
from .grid import Grid2
from .io_formats import write_array, write_csv, write_json

log = logging.getLogger("dirac_edge")

TASKS = ["analyze", "reduce", "edge-trace", "envelope", "evolve", "model-dispersion", "haldane"]

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_expr = {"type": "string", "minLength": 1}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_point4 = {"type": "array", "items": _num, "minItems": 4, "maxItems": 4}
_pow2 = {"type": "integer", "minimum": 2}

SYMBOL = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["domain_wall", "magnetic", "linear", "custom", "strained"]},
        "m": _expr,
        "A": {"type": "array", "items": _expr, "minItems": 2, "maxItems": 2},
        "B": _num,
        "C": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 4, "maxItems": 4},
              "minItems": 3, "maxItems": 3},
        "p": {"type": "array", "items": _expr, "minItems": 3, "maxItems": 3},
        "alpha1": {"type": "array", "items": _expr, "minItems": 2, "maxItems": 2},
        "alpha2": {"type": "array", "items": _expr, "minItems": 2, "maxItems": 2},
        "xi": {"type": "array", "items": _expr, "minItems": 2, "maxItems": 2},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

SCENARIO_SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "task": {"enum": TASKS},
        "seed": {"type": "integer", "minimum": 0},
        "model": {"type": "object"},
        "numerics": {
            "type": "object",
            "properties": {
                "h": _pos, "eps": _pos, "T": _pos, "dt": _pos,
                "L": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
                "N": {"type": "array", "items": _pow2, "minItems": 2, "maxItems": 2},
                "times": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "x_range": _pair,
                "nx": _pow2,
                "snapshots": {"type": "integer", "minimum": 1},
                "n_scan": {"type": "integer", "minimum": 2},
            },
        },
        "packet": {
            "type": "object",
            "properties": {
                "orientation": {"enum": ["minus", "plus"]},
                "kind": {"enum": ["gaussian", "edge"]},
                "x_star": _pair,
                "xi_star": _pair,
            },
            "additionalProperties": False,
        },
        "outputs": {
            "type": "object",
            "properties": {"fields": {"type": "boolean"}, "prefix": {"type": "string"}},
            "additionalProperties": False,
        },
    },
    "required": ["name", "task", "model"],
    "additionalProperties": False,
}

TASK_MODEL = {
    "analyze": {"type": "object", "properties": {"symbol": SYMBOL, "points": {"type": "array", "items": _point4,
                                                                              "minItems": 1}},
                "required": ["symbol", "points"], "additionalProperties": False},
    "reduce": {"type": "object", "properties": {"C": SYMBOL["properties"]["C"]}, "required": ["C"],
               "additionalProperties": False},
    "edge-trace": {"type": "object", "properties": {"symbol": SYMBOL, "z0": _point4, "mu": _num, "s": _num},
                   "required": ["symbol", "z0"], "additionalProperties": False},
    "envelope": {"type": "object", "properties": {"symbol": SYMBOL, "z0": _point4, "mu": _num, "s": _num},
                 "required": ["symbol", "z0"], "additionalProperties": False},
    "evolve": {"type": "object", "properties": {"m": _expr, "A": SYMBOL["properties"]["A"], "B": _num,
                                                "wall": {"enum": ["periodic"]}},
               "additionalProperties": False},
    "model-dispersion": {"type": "object", "properties": {"lam": _expr, "mu": _expr, "s": _expr,
                                                          "n": {"type": "integer", "minimum": 1}},
                         "required": ["lam", "n"], "additionalProperties": False},
    "haldane": {"type": "object", "properties": {"a": _pair, "m": _num,
                                                 "strain": {"type": "object"},
                                                 "sweep": {"type": "integer", "minimum": 1}},
                "additionalProperties": False},
}

TASK_NUMERICS = {
    "edge-trace": ["T", "dt"],
    "envelope": ["T", "dt"],
    "evolve": ["h", "T", "L", "N"],
    "model-dispersion": ["eps", "times", "x_range", "nx"],
}


def load_scenario(path):
    """Parse and validate; raises SchemaError with line/column for bad JSON."""
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read scenario ({exc.strerror})") from exc
    try:
        sc_ = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    validate_scenario(sc_, path)
    return sc_, hashlib.sha256(text.encode()).hexdigest()


def validate_scenario(sc_, path="<scenario>"):
    try:
        jsonschema.validate(sc_, SCENARIO_SCHEMA)
        jsonschema.validate(sc_["model"], TASK_MODEL[sc_["task"]])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"{path}: schema violation at {where}: {exc.message}") from exc
    missing = [k for k in TASK_NUMERICS.get(sc_["task"], []) if k not in sc_.get("numerics", {})]
    if missing:
        raise SchemaError(f"{path}: task {sc_['task']} needs numerics {missing}")


def build_symbol(block):
    kind = block["kind"]
    try:
        if kind == "domain_wall":
            return sc.domain_wall(block.get("m", "x2"))
        if kind == "magnetic":
            return sc.magnetic(block.get("m", "x2"), A=tuple(block.get("A", ("0", "0"))), B=block.get("B"))
        if kind == "linear":
            return sc.linear_symbol(block["C"])
        if kind == "custom":
            return sc.custom(block["p"])
        if kind == "strained":
            return hl.StrainField(tuple(block.get("alpha1", ("1", "0"))), tuple(block.get("alpha2", ("0", "1"))),
                                  tuple(block.get("xi", ("0", "0"))), block.get("m", "x2")).symbol()
    except KeyError as exc:
        raise SchemaError(f"symbol of kind {kind} needs field {exc.args[0]}") from exc
    raise SchemaError(f"unknown symbol kind {kind}")


# tasks ---------------------------------------------------------------------------

def task_analyze(scn, out, prefix):
    sym = build_symbol(scn["model"]["symbol"])
    rows = []
    for z in scn["model"]["points"]:
        z = np.array(z, dtype=float)
        rep = {"z": z, "value": sc.eval_symbol(sym, z).vector(), "M": sc.poisson_vector(sym, z),
               "lambda": float(sc.lambda_gap(sym, z))}
        try:
            lm, lp = sc.eigenlines(sym, z)
            rep["L_minus"], rep["L_plus"] = lm.v, lp.v
            rep["V"] = sc.edge_vector_field(sym, z)
        except DiracEdgeError as exc:
            rep["gap_error"] = str(exc)
        try:
            zc = sc.find_crossing(sym, z)
            rep["crossing"] = zc
            rep["transversality"] = sc.check_transversality(sym, zc)
        except DiracEdgeError as exc:
            rep["crossing_error"] = str(exc)
        rows.append(rep)
    path = os.path.join(out, f"{prefix}analysis.json")
    write_json(path, {"units": "model", "points": rows})
    return [path]


def task_reduce(scn, out, prefix):
    sym = sc.linear_symbol(scn["model"]["C"])
    nf = sr.reduce_linear_symbol(sym)
    res = sr.verify_normal_form(sym, nf.S, nf.U, nf.lam, seed=scn.get("seed", 0))
    path = os.path.join(out, f"{prefix}reduce.json")
    write_json(path, {"units": "model", "S": nf.S, "U": nf.U, "lambda": nf.lam, "nu": nf.nu,
                      "swapped": nf.swapped, "route": nf.route, "residuals": res})
    return [path]


def _trace(scn):
    sym = build_symbol(scn["model"]["symbol"])
    num = scn["numerics"]
    z0 = sc.find_crossing(sym, scn["model"]["z0"])
    traj = ed.integrate_edge_ode(sym, z0, num["T"], num["dt"])
    coef = ed.model_coefficients_along_edge(traj, sym=sym, mu=scn["model"].get("mu", 0.0),
                                            s=scn["model"].get("s", 0.0))
    return sym, traj, coef


def task_edge_trace(scn, out, prefix):
    _, traj, coef = _trace(scn)
    path = os.path.join(out, f"{prefix}edge.csv")
    rows = [[t, *z, r, nu, S] for t, z, r, nu, S in zip(traj.t, traj.z, coef.rho, coef.nu, coef.S)]
    write_csv(path, ["t", "x1", "x2", "xi1", "xi2", "rho", "nu", "S"], rows)
    paths = [path]
    if traj.error:
        diag = os.path.join(out, f"{prefix}edge_warning.json")
        write_json(diag, {"truncated": True, "reason": traj.error, "t_end": float(traj.t[-1])})
        paths.append(diag)
    return paths


def task_envelope(scn, out, prefix):
    _, traj, coef = _trace(scn)
    y = np.linspace(-20, 20, 1024, endpoint=False)
    a0 = np.pi ** -0.25 * np.exp(-y ** 2 / 2) + 0j
    rows, frames = [], []
    for k in range(len(traj.t)):
        st = ed.evolve_envelope(y, a0, coef.rho[k], coef.nu[k], coef.S[k], traj.t[k])
        rows.append([st.t, st.rho, st.nu, st.S, st.norm(), float(np.max(np.abs(st.a)))])
        frames.append(st.a)
    p1 = os.path.join(out, f"{prefix}envelope.csv")
    write_csv(p1, ["t", "rho", "nu", "S", "norm", "sup"], rows)
    paths = [p1]
    if scn.get("outputs", {}).get("fields"):
        p2 = os.path.join(out, f"{prefix}envelope.bin")
        write_array(p2, np.array(frames))
        paths.append(p2)
    return paths


def task_evolve(scn, out, prefix):
    mdl, num = scn["model"], scn["numerics"]
    pk = scn.get("packet", {})
    L, N, h = tuple(num["L"]), tuple(num["N"]), num["h"]
    grid = Grid2(L, N)
    B = float(mdl.get("B", 0.0))
    m = mdl.get("m") or ps.periodic_wall(L[1])
    A = tuple(mdl["A"]) if "A" in mdl else (ps.periodic_gauge(L[1], B) if B else ("0", "0"))
    model = ps.PDEModel(m, A)
    sym = model.symbol()
    x_star = tuple(pk.get("x_star", (0.0, 0.0)))
    z0 = sc.find_crossing(sym, [*x_star, *pk.get("xi_star", (0.0, 0.0))])
    lm, lp = sc.eigenlines(sym, z0)
    v = lm.v if pk.get("orientation", "minus") == "minus" else lp.v
    if pk.get("kind", "gaussian") == "edge" and B:
        psi0 = ps.magnetic_edge_packet(B, h, grid, v, x_star=x_star)
    else:
        spec = ed.WavepacketSpec(x_star, tuple(z0[2:]), None, v)
        psi0 = ed.synthesize_wavepacket(spec, h, grid)
    ev = ps.evolve(model, psi0, h, num["T"], dt=num.get("dt"), snapshots=num.get("snapshots", 20))
    sampled = model.sample(grid)
    rows, centers = [], []
    for t, f in zip(ev.times, ev.snapshots):
        ob = ps.observables(f, sampled)
        ob["line_projections"] = ps.line_fractions(f, model)
        centers.append(ob["center_of_mass"])
        rows.append([t, ob["mass"], ob["linf"], *ob["center_of_mass"], ob["interface_mass_fraction"],
                     ob["line_projections"]["minus"], ob["line_projections"]["plus"]])
    p1 = os.path.join(out, f"{prefix}observables.csv")
    write_csv(p1, ["t", "mass", "linf", "cx1", "cx2", "interface_fraction", "minus_fraction",
                   "plus_fraction"], rows)
    vel = ps.fit_velocity(ev.times, centers)
    pred = sc.edge_vector_field(sym, z0)[:2]
    p2 = os.path.join(out, f"{prefix}speed.csv")
    write_csv(p2, ["vx1", "vx2", "speed", "predicted_vx1", "predicted_vx2", "predicted_speed", "dt", "steps"],
              [[vel[0], vel[1], float(np.hypot(*vel)), pred[0], pred[1], float(np.hypot(*pred)), ev.dt, ev.nsteps]])
    paths = [p1, p2]
    if scn.get("outputs", {}).get("fields"):
        p3 = os.path.join(out, f"{prefix}fields.bin")
        write_array(p3, np.array([f.psi for f in ev.snapshots]))
        paths.append(p3)
    return paths


def task_model_dispersion(scn, out, prefix):
    mdl, num = scn["model"], scn["numerics"]
    coeffs = ms.ModelCoefficients1D(mdl["lam"], mdl.get("mu", "0"), mdl.get("s", "0"))
    eps, n = num["eps"], mdl["n"]
    x = np.linspace(*num["x_range"], num["nx"], endpoint=False)
    dx = x[1] - x[0]

    def a_hat(k):
        return np.array([np.pi ** -0.25 * np.sqrt(2 * np.pi) * np.exp(-k ** 2 / 2) + 0j, 0 * k + 0j])

    flow = ms.Flow(coeffs)
    rows, fields = [], []
    for t in num["times"]:
        r = ms.evaluate_parametrix(flow, n, eps, a_hat, t, x)
        dens = np.sum(np.abs(r.quadrature) ** 2, axis=0)
        lo, hi = r.cone
        margin = 3 * np.sqrt(eps)
        outside = (x < lo - margin) | (x > hi + margin)
        sdens = np.sum(np.abs(r.stationary) ** 2, axis=0)
        tot = np.sum(dens)
        sup = float(np.sqrt(np.max(dens)))
        rows.append([t, sup, sup * np.sqrt(t), float(np.sum(dens[outside]) / tot),
                     float(np.sum(sdens[outside]) / max(np.sum(sdens), 1e-300)),
                     float(np.sqrt(np.sum(np.abs(r.quadrature - r.stationary) ** 2) * dx)), lo, hi])
        fields.append(r.quadrature)
    p1 = os.path.join(out, f"{prefix}dispersion.csv")
    write_csv(p1, ["t", "sup", "sup_sqrt_t", "outside_fraction", "leading_outside_fraction",
                   "leading_l2_gap", "cone_lo", "cone_hi"], rows)
    paths = [p1]
    if scn.get("outputs", {}).get("fields"):
        p2 = os.path.join(out, f"{prefix}parametrix.bin")
        write_array(p2, np.array(fields))
        paths.append(p2)
    return paths


def task_haldane(scn, out, prefix):
    mdl, num = scn["model"], scn.get("numerics", {})
    model = hl.BlochHamiltonian(tuple(mdl.get("a", (0.0, 0.0))), float(mdl.get("m", 0.0)))
    conv = hl.resolve_convention()
    cone = hl.extract_cone(model, hl.find_dirac_point(model))
    rep = {"units": "lattice momenta", "convention": conv, "xi_a": cone.xi, "alpha": cone.alpha,
           "mass_coefficient": cone.mass_coefficient, "beta": float(model.beta(cone.xi)),
           "cartesian_alpha": hl.cartesian_cone(cone), "info": cone.info}
    if "strain" in mdl:
        st = mdl["strain"]
        strain = hl.StrainField(tuple(st.get("alpha1", ("1", "0"))), tuple(st.get("alpha2", ("0", "1"))),
                                tuple(st.get("xi", ("0", "0"))), st.get("m", "x2"))
        pts = np.linspace(-1, 1, mdl.get("sweep", 11))
        sweep = []
        for x1 in pts:
            zc = sc.find_crossing(strain.symbol(), [x1, 0.0, 0.0, 0.0])
            sweep.append(hl.edge_speed_strained(strain, zc[:2]))
        rep["strained_speeds"] = sweep
    p1 = os.path.join(out, f"{prefix}cone.json")
    write_json(p1, rep)
    p2 = os.path.join(out, f"{prefix}bands.csv")
    write_csv(p2, ["xi1", "xi2", "E_minus", "E_plus"], hl.band_scan(model, num.get("n_scan", 32)))
    return [p1, p2]


RUNNERS = {
    "analyze": task_analyze,
    "reduce": task_reduce,
    "edge-trace": task_edge_trace,
    "envelope": task_envelope,
    "evolve": task_evolve,
    "model-dispersion": task_model_dispersion,
    "haldane": task_haldane,
}


def run_scenario(path, out_root, task=None):
    """Run one scenario file. Returns (exit code, message)."""
    try:
        scn, digest = load_scenario(path)
    except SchemaError as exc:
        return 2, str(exc)
    if task is not None and scn["task"] != task:
        return 2, f"{path}: scenario task {scn['task']} does not match requested task {task}"
    out = os.path.join(out_root, scn["name"])
    os.makedirs(out, exist_ok=True)
    prefix = scn.get("outputs", {}).get("prefix", "")
    t0 = time.perf_counter()
    manifest = {"tool": "dirac-edge", "version": __version__, "scenario": os.path.abspath(path),
                "scenario_sha256": digest, "task": scn["task"], "seed": scn.get("seed", 0),
                "python": platform.python_version(), "numpy": np.__version__}
    np.random.seed(scn.get("seed", 0))
    try:
        strict = os.environ.get("DIRAC_EDGE_STRICT")
        with np.errstate(over="raise", invalid="raise", divide="raise") if strict else contextlib.nullcontext():
            files = RUNNERS[scn["task"]](scn, out, prefix)
    except SchemaError as exc:
        return 2, f"{path}: {exc}"
    except (DiracEdgeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        diag = {"scenario": scn["name"], "error": type(exc).__name__, "message": str(exc)}
        if getattr(exc, "bound", None) is not None:
            diag["bound"] = exc.bound
        write_json(os.path.join(out, "diagnostic.json"), diag)
        manifest.update(status="failed", wall_time_s=time.perf_counter() - t0, outputs=["diagnostic.json"])
        write_json(os.path.join(out, "manifest.json"), manifest)
        return 3, f"{scn['name']}: {type(exc).__name__}: {exc}"
    manifest.update(status="ok", wall_time_s=time.perf_counter() - t0,
                    outputs=[os.path.relpath(f, out) for f in files])
    write_json(os.path.join(out, "manifest.json"), manifest)
    return 0, f"{scn['name']}: ok ({len(files)} files)"


def bundled_scenarios():
    base = resources.files("dirac_edge") / "scenarios"
    return sorted(str(p) for p in base.iterdir() if p.name.endswith(".json"))


def _resolve(path):
    if os.path.exists(path):
        return path
    for p in bundled_scenarios():
        if os.path.basename(p) in (path, f"{path}.json"):
            return p
    return path


def thread_count(flag=None):
    """--threads value, else $DIRAC_EDGE_THREADS, else 1."""
    n = flag if flag is not None else int(os.environ.get("DIRAC_EDGE_THREADS", "1"))
    if n < 1:
        raise ValueError("thread count must be positive")
    return n


def main(argv=None):
    parser = argparse.ArgumentParser(prog="dirac-edge", description=__doc__.splitlines()[0])
    parser.add_argument("task", choices=TASKS + ["run", "list"],
                        help="pipeline to run ('run' accepts any task, 'list' shows bundled scenarios)")
    parser.add_argument("--scenario", action="append", default=[],
                        help="scenario JSON file or bundled scenario name (repeatable)")
    parser.add_argument("--out", default="dirac_edge_out", help="output directory")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $DIRAC_EDGE_THREADS or 1)")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.task == "list":
        for p in bundled_scenarios():
            print(os.path.basename(p)[:-5])
        return 0
    if not args.scenario:
        parser.error("at least one --scenario is required")
    try:
        threads = thread_count(args.threads)
    except ValueError as exc:
        parser.error(str(exc))
    task = None if args.task == "run" else args.task
    paths = [_resolve(p) for p in args.scenario]
    os.makedirs(args.out, exist_ok=True)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(lambda p: run_scenario(p, args.out, task), paths))
    code = 0
    for rc, msg in results:
        (print if rc == 0 else lambda m: print(m, file=sys.stderr))(msg)
        log.info(msg)
        code = max(code, rc)
    return code


if __name__ == "__main__":
    sys.exit(main())
