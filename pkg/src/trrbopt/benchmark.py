"""Benchmark construction and experiment drivers.

Builds the building-floor diffusion problem from a JSON config (walls and
doors enter the diffusion coefficient, boundary walls and windows the Robin
term, heaters the source), runs the method comparison experiments, and emits
machine-readable run records, comparison tables and plot data.

All concrete coefficient values shipped in ``configs/`` (diffusion ranges,
heater source bounds, objective weights) are repo-defined defaults documented
there; only the domain, the feature roles/counts and the targets follow the
published setup they imitate.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from importlib import resources

import numpy as np

from .assembly import (AssembledStore, assemble_boundary_mass_component,
                       assemble_load_component, assemble_objective_components,
                       assemble_stiffness_component, boundary_field, volume_field)
from .errors import ConfigError
from .estimators import EstimatorBundle, delta_mu
from .fom import FomSystem
from .mesh import build_mesh
from .model import (ParameterBox, ParametricProblem, SeparableForm,
                    ThetaCoefficient, affine_theta, constant_theta)
from .optimizer import TrConfig, run_fom_tr_newton_cg, run_trrb

RUN_SCHEMA = "trrbopt-run/1"
CONFIG_SCHEMA_VERSION = 1

METHODS = ("fom-tr-newton-cg", "trrb-bfgs-ue", "trrb-newton-ue", "trrb-newton-oe")

_VARIANTS = {
    "trrb-bfgs-ue": {"subproblem": "bfgs", "enrichment_strategy": "lagrangian",
                     "skip_enrichment_enabled": False},
    "trrb-newton-ue": {"subproblem": "newton", "enrichment_strategy": "taylor_directional",
                       "skip_enrichment_enabled": False},
    "trrb-newton-oe": {"subproblem": "newton", "enrichment_strategy": "taylor_directional",
                       "skip_enrichment_enabled": True},
}


# ---------------------------------------------------------------------------
# config loading and validation
# ---------------------------------------------------------------------------

def config_schema() -> dict:
    with resources.files("trrbopt.configs").joinpath("schema_v1.json").open() as fh:
        return json.load(fh)


def shipped_config_path(name: str):
    return resources.files("trrbopt.configs").joinpath(f"{name}.json")


def load_config(path) -> dict:
    with open(path) as fh:
        cfg = json.load(fh)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    """Schema plus semantic validation; raises ConfigError with the culprit."""
    import jsonschema

    try:
        jsonschema.validate(cfg, config_schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config fails schema validation: {exc.message}") from exc

    names = [p["name"] for p in cfg["parameters"]]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate parameter names")
    lower = np.array([p["lower"] for p in cfg["parameters"]], dtype=float)
    upper = np.array([p["upper"] for p in cfg["parameters"]], dtype=float)
    if np.any(lower > upper):
        raise ConfigError("parameter bounds empty: lower > upper")

    bound = set()
    for feat in cfg["features"]:
        theta = feat.get("theta", {})
        if "param" in theta:
            if theta["param"] not in names:
                raise ConfigError(f"feature '{feat['name']}' bound to unknown parameter "
                                  f"'{theta['param']}'")
            bound.add(theta["param"])
    unbound = [n for n in names if n not in bound]
    if unbound:
        raise ConfigError(f"parameters bound to no feature: {unbound}")

    def inside(mu, what):
        mu = np.asarray(mu, dtype=float)
        if mu.shape != lower.shape:
            raise ConfigError(f"{what} has wrong length")
        if np.any(mu < lower) or np.any(mu > upper):
            raise ConfigError(f"{what} lies outside the parameter bounds")

    inside(cfg["reference_mu"], "reference_mu")
    inside(cfg["objective"]["desired_parameter"], "desired_parameter")
    ds = cfg["objective"]["desired_state"]
    if ds["kind"] == "fom":
        inside(ds["mu"], "desired_state.mu")

    # diffusion features must not overlap each other
    rects = [f["rect"] for f in cfg["features"] if f["role"] in ("wall", "door") and "rect" in f]
    for i in range(len(rects)):
        for j in range(i + 1, len(rects)):
            a, b = rects[i], rects[j]
            if a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]:
                raise ConfigError(f"diffusion features overlap: {rects[i]} and {rects[j]}")


def _theta_from_spec(theta_cfg: dict, names: list, dim: int) -> ThetaCoefficient:
    intercept = float(theta_cfg.get("intercept", 0.0))
    if "param" in theta_cfg:
        idx = names.index(theta_cfg["param"])
        return affine_theta(intercept, {idx: float(theta_cfg.get("slope", 1.0))}, dim)
    return constant_theta(intercept, dim)


def _is_parametric(theta_cfg: dict) -> bool:
    return "param" in theta_cfg


def build_problem(cfg: dict, nx: int = None, ny: int = None):
    """Assemble the benchmark problem from a validated config.

    Returns ``(problem, store, meta)``; ``meta`` carries the mesh, parameter
    names and objective data needed by the drivers.
    """
    validate_config(cfg)
    lx, ly = cfg["domain"]["lx"], cfg["domain"]["ly"]
    nx = nx or cfg["mesh"]["nx"]
    ny = ny or cfg["mesh"]["ny"]
    mesh = build_mesh(lx, ly, nx, ny)
    store = AssembledStore(mesh=mesh, matrices=[], vectors=[])

    names = [p["name"] for p in cfg["parameters"]]
    dim = len(names)
    box = ParameterBox(np.array([p["lower"] for p in cfg["parameters"]], dtype=float),
                       np.array([p["upper"] for p in cfg["parameters"]], dtype=float))
    u_out = float(cfg.get("u_out", 0.0))

    a_components, a_thetas = [], []
    l_components, l_thetas = [], []

    # background diffusion: base coefficient, parametric features carved out,
    # fixed features folded in with their constant coefficient
    bg_patches = []
    diffusion_feats = [f for f in cfg["features"] if f["role"] in ("wall", "door")]
    for feat in diffusion_feats:
        value = 0.0 if _is_parametric(feat["theta"]) else float(feat["theta"]["intercept"])
        bg_patches.append((feat["rect"], value))
    bg = volume_field("background", bg_patches, base=float(cfg.get("background_diffusion", 1.0)))
    a_components.append(store.add_matrix(assemble_stiffness_component(mesh, bg)))
    a_thetas.append(constant_theta(1.0, dim))

    for feat in diffusion_feats:
        if not _is_parametric(feat["theta"]):
            continue
        fld = volume_field(feat["role"], [(feat["rect"], 1.0)])
        mat = assemble_stiffness_component(mesh, fld)
        if mat.nnz == 0:
            raise ConfigError(f"feature '{feat['name']}' is unresolved at mesh "
                              f"{nx}x{ny} (smaller than a cell)")
        a_components.append(store.add_matrix(mat))
        a_thetas.append(_theta_from_spec(feat["theta"], names, dim))

    # Robin boundary: fixed segments folded into one base component, each
    # parametric segment its own; every component brings its u_out inflow twin
    boundary_feats = [f for f in cfg["features"] if f["role"] == "window"
                      or (f["role"] == "wall" and "side" in f)]
    base_patches = []
    for feat in boundary_feats:
        side, (t0, t1) = feat["side"], feat["span"]
        value = 0.0 if _is_parametric(feat["theta"]) else float(feat["theta"]["intercept"])
        base_patches.append(((side, t0, t1), value))
    base_robin = boundary_field("background", base_patches,
                                base=float(cfg.get("boundary_base_theta", 0.0)))
    mat = assemble_boundary_mass_component(mesh, base_robin)
    if mat.nnz:
        a_components.append(store.add_matrix(mat))
        a_thetas.append(constant_theta(1.0, dim))
        if u_out != 0.0:
            l_components.append(store.add_vector(
                assemble_load_component(mesh, base_robin, boundary_scale=u_out)))
            l_thetas.append(constant_theta(1.0, dim))
    for feat in boundary_feats:
        if not _is_parametric(feat["theta"]):
            continue
        side, (t0, t1) = feat["side"], feat["span"]
        fld = boundary_field(feat["role"], [((side, t0, t1), 1.0)])
        bmat = assemble_boundary_mass_component(mesh, fld)
        if bmat.nnz == 0:
            raise ConfigError(f"boundary feature '{feat['name']}' is unresolved at mesh "
                              f"{nx}x{ny}")
        theta = _theta_from_spec(feat["theta"], names, dim)
        a_components.append(store.add_matrix(bmat))
        a_thetas.append(theta)
        if u_out != 0.0:
            l_components.append(store.add_vector(
                assemble_load_component(mesh, fld, boundary_scale=u_out)))
            l_thetas.append(theta)

    # heaters: volume sources
    for feat in cfg["features"]:
        if feat["role"] != "heater":
            continue
        fld = volume_field("heater", [(feat["rect"], 1.0)])
        vec = assemble_load_component(mesh, fld)
        if not np.any(vec):
            raise ConfigError(f"feature '{feat['name']}' is unresolved at mesh {nx}x{ny}")
        l_components.append(store.add_vector(vec))
        l_thetas.append(_theta_from_spec(feat["theta"], names, dim))

    if not l_components:
        raise ConfigError("problem has no load component (no heater, no inflow)")

    # energy product at the reference parameter, same assembly path as A(mu)
    mu_check = np.asarray(cfg["reference_mu"], dtype=float)
    K = sum(th(mu_check) * store.matrices[c] for th, c in zip(a_thetas, a_components))
    store.set_product(K)

    # objective data (needs the PDE operator when the target is a FOM solve)
    obj = cfg["objective"]
    sigma_d = float(obj["sigma_d"])
    sigma = np.asarray(obj["tikhonov"], dtype=float)
    mu_d = np.asarray(obj["desired_parameter"], dtype=float)
    D = volume_field("domain-of-interest", [(obj["domain_of_interest"], 1.0)])
    ds = obj["desired_state"]
    if ds["kind"] == "constant":
        u_desired = float(ds["value"])
    else:
        from .assembly import spd_splu

        mu_t = np.asarray(ds["mu"], dtype=float)
        A_t = sum(th(mu_t) * store.matrices[c] for th, c in zip(a_thetas, a_components))
        l_t = sum(th(mu_t) * store.vectors[c] for th, c in zip(l_thetas, l_components))
        u_desired = spd_splu(A_t).solve(l_t)
    parts = assemble_objective_components(mesh, D, u_desired)

    k_components = [store.add_matrix(parts["massD"])]
    k_thetas = [constant_theta(sigma_d / 2.0, dim)]
    j_components = [store.add_vector(parts["momentD"])]
    j_thetas = [constant_theta(-sigma_d, dim)]

    offset = float(sigma_d / 2.0 * parts["offset"]) + 1.0

    def theta_eval(mu, s=sigma, md=mu_d, off=offset):
        d = np.asarray(mu, dtype=float) - md
        return 0.5 * float(s @ (d * d)) + off

    theta_big = ThetaCoefficient(
        eval=theta_eval,
        grad=lambda mu, s=sigma, md=mu_d: s * (np.asarray(mu, dtype=float) - md),
        hess=lambda mu, s=sigma: np.diag(s),
    )

    problem = ParametricProblem(
        a=SeparableForm("bilinear-a", tuple(a_components), tuple(a_thetas)),
        k=SeparableForm("bilinear-k", tuple(k_components), tuple(k_thetas)),
        l=SeparableForm("linear-l", tuple(l_components), tuple(l_thetas)),
        j=SeparableForm("linear-j", tuple(j_components), tuple(j_thetas)),
        theta_big=theta_big,
        box=box,
        mu_check=mu_check,
    )
    meta = {"mesh": mesh, "parameter_names": names, "mu_desired": mu_d,
            "sigma_d": sigma_d, "config_name": cfg.get("name", "unnamed")}
    return problem, store, meta


# ---------------------------------------------------------------------------
# deterministic seeding
# ---------------------------------------------------------------------------

_M64 = (1 << 64) - 1


def splitmix64_stream(seed: int):
    state = seed & _M64

    def nxt() -> int:
        nonlocal state
        state = (state + 0x9E3779B97F4A7C15) & _M64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
        return (z ^ (z >> 31)) & _M64

    return nxt


def random_mu(box: ParameterBox, seed: int) -> np.ndarray:
    """Uniform parameter in the box from a splitmix64 stream; fully deterministic."""
    nxt = splitmix64_stream(seed)
    t = np.array([(nxt() >> 11) * 2.0**-53 for _ in range(box.dim)])
    return box.lower + t * (box.upper - box.lower)


# ---------------------------------------------------------------------------
# single-run driver and records
# ---------------------------------------------------------------------------

def _trrb_rows(state, mu_ref):
    rows = []
    for r in state.history:
        row = dict(r)
        if mu_ref is not None and "mu" in row:
            row["err_mu"] = float(np.linalg.norm(np.asarray(row["mu"]) - mu_ref))
        rows.append(row)
    return rows


def run_method(method: str, problem, store, trcfg: TrConfig, mu0, seed: int,
               bundle: EstimatorBundle = None, mu_ref=None,
               with_delta_mu: bool = False, with_second_order: bool = False,
               baseline_max_iter: int = None) -> dict:
    """Run one optimizer variant and wrap the outcome as a RunRecord dict."""
    if method not in METHODS:
        raise ConfigError(f"unknown method id '{method}'")
    fom = FomSystem(problem, store)
    t0 = time.perf_counter()
    if method == "fom-tr-newton-cg":
        res = run_fom_tr_newton_cg(fom, trcfg, mu0, max_iter=baseline_max_iter)
        rows = res["history"]
        if mu_ref is not None:
            for r in rows:
                r["err_mu"] = float(np.linalg.norm(np.asarray(r["mu"]) - mu_ref))
        terminal = {"mu_final": res["mu_final"].tolist(), "gh": res["gh"],
                    "iterations": res["iterations"], "converged": res["converged"],
                    "jh": res["jh"]}
        state = None
    else:
        variant = _VARIANTS[method]
        cfg = TrConfig(**{**_trcfg_dict(trcfg), **{k: v for k, v in variant.items()
                                                   if k != "subproblem"}})
        state = run_trrb(fom, cfg, mu0, bundle=bundle, subproblem=variant["subproblem"])
        rows = _trrb_rows(state, np.asarray(mu_ref) if mu_ref is not None else None)
        terminal = {"mu_final": state.mu.tolist(),
                    "gh": next((r["gh"] for r in reversed(state.history) if "gh" in r),
                               float("nan")),
                    "iterations": state.k, "converged": state.converged,
                    "termination": state.termination,
                    "rb_dims": list(state.rom.dims)}
    runtime = time.perf_counter() - t0
    terminal["runtime"] = runtime
    terminal["fom_solves"] = fom.counters.total_fom_solves
    terminal["counters"] = fom.counters.snapshot()
    if mu_ref is not None:
        mu_ref = np.asarray(mu_ref, dtype=float)
        terminal["mu_ref"] = mu_ref.tolist()
        err = float(np.linalg.norm(np.asarray(terminal["mu_final"]) - mu_ref))
        terminal["err_mu"] = err
        nrm = float(np.linalg.norm(mu_ref))
        terminal["rel_err_mu"] = err / nrm if nrm > 0 else err

    if with_delta_mu and method != "fom-tr-newton-cg":
        t_dm = time.perf_counter()
        dm = delta_mu(fom, np.asarray(terminal["mu_final"]))
        terminal["delta_mu"] = dm["bound"]
        terminal["delta_mu_lambda_min"] = dm["lambda_min"]
        terminal["delta_mu_applicable"] = dm["applicable"]
        terminal["delta_mu_time"] = time.perf_counter() - t_dm
    if with_second_order:
        point = fom.point(np.asarray(terminal["mu_final"]))
        so = fom.second_order_check(np.asarray(terminal["mu_final"]), point, trcfg.eps_active)
        terminal["second_order_passed"] = so["passed"]
        terminal["second_order_lambda_min"] = so["lambda_min_inactive"]

    return {"schema": RUN_SCHEMA, "method": method, "seed": seed,
            "mu0": np.asarray(mu0, dtype=float).tolist(),
            "tau_foc": trcfg.tau_foc, "rows": rows, "terminal": terminal,
            "_state": state}


def _trcfg_dict(cfg: TrConfig) -> dict:
    return {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}


def strip_record(record: dict) -> dict:
    """Drop non-serializable internals before writing a record to JSON."""
    return {k: v for k, v in record.items() if not k.startswith("_")}


def _workers(explicit=None) -> int:
    if explicit is not None:
        return max(1, int(explicit))
    return max(1, int(os.environ.get("TRRBOPT_THREADS", "1")))


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def experiment1(cfg: dict, seeds: int = 10, tau_foc: float = 5e-4, tau_mu: float = 1e-4,
                methods=None, nx: int = None, ny: int = None, workers: int = None,
                tau_foc_baseline: float = 1e-9, max_phases: int = 4) -> list:
    """Parameter-control experiment: run to ``tau_foc``, evaluate the
    optimal-parameter bound, tighten the tolerance a hundredfold and resume
    until the bound drops below ``tau_mu``.

    The full-order baseline is run per seed at ``tau_foc_baseline`` and serves
    as the error-curve reference for that seed.
    """
    methods = list(methods or METHODS)
    problem, store, meta = build_problem(cfg, nx=nx, ny=ny)
    bundle = EstimatorBundle.build(problem, store)
    records = []

    def one_seed(seed: int):
        out = []
        mu0 = random_mu(problem.box, seed)
        base_cfg = TrConfig(tau_foc=tau_foc_baseline)
        fom_base = FomSystem(problem, store)
        t0 = time.perf_counter()
        base = run_fom_tr_newton_cg(fom_base, base_cfg, mu0, max_iter=200)
        mu_ref = base["mu_final"]
        if "fom-tr-newton-cg" in methods:
            rows = base["history"]
            for r in rows:
                r["err_mu"] = float(np.linalg.norm(np.asarray(r["mu"]) - mu_ref))
            out.append({"schema": RUN_SCHEMA, "method": "fom-tr-newton-cg", "seed": seed,
                        "mu0": mu0.tolist(), "tau_foc": tau_foc_baseline, "rows": rows,
                        "terminal": {"mu_final": mu_ref.tolist(), "gh": base["gh"],
                                     "iterations": base["iterations"],
                                     "converged": base["converged"],
                                     "runtime": time.perf_counter() - t0,
                                     "fom_solves": fom_base.counters.total_fom_solves,
                                     "counters": fom_base.counters.snapshot(),
                                     "mu_ref": mu_ref.tolist(),
                                     "err_mu": 0.0, "rel_err_mu": 0.0},
                        "_state": None})
        for method in methods:
            if method == "fom-tr-newton-cg":
                continue
            out.append(_controlled_run(method, problem, store, bundle, mu0, seed,
                                       mu_ref, tau_foc, tau_mu, max_phases))
        return out

    pool = _workers(workers)
    if pool == 1:
        for s in range(seeds):
            records.extend(one_seed(s))
    else:
        with ThreadPoolExecutor(max_workers=pool) as ex:
            for chunk in ex.map(one_seed, range(seeds)):
                records.extend(chunk)
    return records


def _controlled_run(method, problem, store, bundle, mu0, seed, mu_ref,
                    tau_foc, tau_mu, max_phases) -> dict:
    """TR-RB run with the tolerance-decrease post-processing loop."""
    variant = _VARIANTS[method]
    fom = FomSystem(problem, store)
    t0 = time.perf_counter()
    phases = []
    state = None
    tau = tau_foc
    for phase in range(max_phases):
        cfg = TrConfig(tau_foc=tau, **{k: v for k, v in variant.items()
                                       if k != "subproblem"})
        if state is not None:
            cfg = TrConfig(tau_foc=tau, k_max=state.k + cfg.k_max,
                           **{k: v for k, v in variant.items() if k != "subproblem"})
        state = run_trrb(fom, cfg, mu0 if state is None else state.mu,
                         bundle=bundle, subproblem=variant["subproblem"], state=state)
        t_dm = time.perf_counter()
        dm = delta_mu(fom, state.mu)
        dm_time = time.perf_counter() - t_dm
        phases.append({"tau_foc": tau, "delta_mu": dm["bound"],
                       "lambda_min": dm["lambda_min"], "applicable": dm["applicable"],
                       "delta_mu_time": dm_time, "k_end": state.k})
        if not np.isfinite(tau_mu) or (dm["applicable"] and dm["bound"] <= tau_mu):
            break
        tau *= 1e-2
    rows = _trrb_rows(state, np.asarray(mu_ref))
    err = float(np.linalg.norm(state.mu - np.asarray(mu_ref)))
    nrm = float(np.linalg.norm(mu_ref))
    terminal = {"mu_final": state.mu.tolist(),
                "gh": next((r["gh"] for r in reversed(state.history) if "gh" in r),
                           float("nan")),
                "iterations": state.k, "converged": state.converged,
                "termination": state.termination, "rb_dims": list(state.rom.dims),
                "runtime": time.perf_counter() - t0,
                "fom_solves": fom.counters.total_fom_solves,
                "counters": fom.counters.snapshot(),
                "mu_ref": np.asarray(mu_ref).tolist(), "err_mu": err,
                "rel_err_mu": err / nrm if nrm > 0 else err,
                "delta_mu": phases[-1]["delta_mu"],
                "delta_mu_lambda_min": phases[-1]["lambda_min"],
                "delta_mu_applicable": phases[-1]["applicable"],
                "phases": phases}
    return {"schema": RUN_SCHEMA, "method": method, "seed": seed, "mu0": mu0.tolist(),
            "tau_foc": phases[-1]["tau_foc"], "rows": rows, "terminal": terminal,
            "_state": state}


def experiment2(cfg: dict, seeds: int = 10, tau_foc: float = 1e-5, methods=None,
                nx: int = None, ny: int = None, workers: int = None,
                baseline_max_iter: int = 200) -> list:
    """Large-parameter-set experiment: no parameter control, error measured
    against the desired parameter that generated the target state."""
    methods = list(methods or METHODS)
    problem, store, meta = build_problem(cfg, nx=nx, ny=ny)
    bundle = EstimatorBundle.build(problem, store)
    mu_ref = meta["mu_desired"]
    trcfg = TrConfig(tau_foc=tau_foc)
    records = []

    def one_seed(seed: int):
        out = []
        mu0 = random_mu(problem.box, seed)
        for method in methods:
            out.append(run_method(method, problem, store, trcfg, mu0, seed,
                                  bundle=bundle, mu_ref=mu_ref,
                                  baseline_max_iter=baseline_max_iter))
        return out

    pool = _workers(workers)
    if pool == 1:
        for s in range(seeds):
            records.extend(one_seed(s))
    else:
        with ThreadPoolExecutor(max_workers=pool) as ex:
            for chunk in ex.map(one_seed, range(seeds)):
                records.extend(chunk)
    return records


# ---------------------------------------------------------------------------
# comparison table and plot data
# ---------------------------------------------------------------------------

def compare_methods(records: list) -> dict:
    """Aggregate per-method statistics; speedup is measured against the
    full-order baseline when present."""
    if not records:
        raise ConfigError("no records to compare")
    by_method = {}
    for rec in records:
        by_method.setdefault(rec["method"], []).append(rec)

    base_runtime = None
    if "fom-tr-newton-cg" in by_method:
        base_runtime = float(np.mean([r["terminal"]["runtime"]
                                      for r in by_method["fom-tr-newton-cg"]]))

    rows = []
    for method in METHODS:
        if method not in by_method:
            continue
        recs = by_method[method]
        runtimes = np.array([r["terminal"]["runtime"] for r in recs])
        iters = np.array([r["terminal"]["iterations"] for r in recs])
        rel = np.array([r["terminal"].get("rel_err_mu", np.nan) for r in recs])
        foc = np.array([r["terminal"].get("gh", np.nan) for r in recs])
        solves = np.array([r["terminal"].get("fom_solves", np.nan) for r in recs])
        row = {
            "method": method,
            "runs": len(recs),
            "runtime_avg": float(runtimes.mean()),
            "runtime_min": float(runtimes.min()),
            "runtime_max": float(runtimes.max()),
            "speedup": (base_runtime / float(runtimes.mean())
                        if base_runtime and method != "fom-tr-newton-cg" else
                        (1.0 if method == "fom-tr-newton-cg" and base_runtime else None)),
            "iterations_avg": float(iters.mean()),
            "iterations_min": int(iters.min()),
            "iterations_max": int(iters.max()),
            "rel_error_avg": float(np.nanmean(rel)) if np.any(np.isfinite(rel)) else None,
            "foc_avg": float(np.nanmean(foc)) if np.any(np.isfinite(foc)) else None,
            "fom_solves_avg": float(np.nanmean(solves)) if np.any(np.isfinite(solves)) else None,
        }
        rows.append(row)

    note = None if base_runtime else "speedup omitted: no full-order baseline in records"
    return {"rows": rows, "note": note, "csv": _compare_csv(rows), "text": _compare_text(rows, note)}


def _fmt(x, spec=".3g"):
    if x is None:
        return "--"
    return format(x, spec)


def _compare_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["method", "runtime[s] avg", "runtime[s] min", "runtime[s] max",
                     "speed-up", "iterations k avg", "iterations k min",
                     "iterations k max", "rel. error", "FOC cond.", "FOM solves avg"])
    for r in rows:
        writer.writerow([r["method"], f"{r['runtime_avg']:.4g}", f"{r['runtime_min']:.4g}",
                         f"{r['runtime_max']:.4g}", _fmt(r["speedup"]),
                         f"{r['iterations_avg']:.4g}", r["iterations_min"],
                         r["iterations_max"], _fmt(r["rel_error_avg"], ".3e"),
                         _fmt(r["foc_avg"], ".3e"), _fmt(r["fom_solves_avg"])])
    return buf.getvalue()


def _compare_text(rows, note) -> str:
    header = (f"{'method':<20} {'runtime[s] avg (min/max)':>28} {'speed-up':>9} "
              f"{'iterations k':>16} {'rel. error':>12} {'FOC cond.':>12}")
    lines = [header, "-" * len(header)]
    for r in rows:
        rt = f"{r['runtime_avg']:.3g} ({r['runtime_min']:.3g}/{r['runtime_max']:.3g})"
        it = f"{r['iterations_avg']:.3g} ({r['iterations_min']}/{r['iterations_max']})"
        lines.append(f"{r['method']:<20} {rt:>28} {_fmt(r['speedup']):>9} {it:>16} "
                     f"{_fmt(r['rel_error_avg'], '.2e'):>12} {_fmt(r['foc_avg'], '.2e'):>12}")
    if note:
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"


def emit_plot_data(records: list, out_dir) -> list:
    """Write per-(method, seed) series files and one SVG chart per figure.

    Series files are whitespace-delimited and bit-match the record rows.
    Returns the list of written paths; empty input writes nothing.
    """
    import warnings as _warnings

    from pathlib import Path

    out = Path(out_dir)
    if not records:
        _warnings.warn("no records; nothing to plot")
        return []
    out.mkdir(parents=True, exist_ok=True)
    written = []

    series_te = {}
    series_ii = {}
    for rec in records:
        tag = f"{rec['method']}_seed{rec['seed']}"
        te_rows = [(r["time"], r.get("err_mu", float("nan"))) for r in rec["rows"]
                   if "time" in r]
        ii_rows = [(r["k"], r.get("inner_iters", 0)) for r in rec["rows"]]
        path = out / f"{tag}.time_error.dat"
        with open(path, "w") as fh:
            fh.write("# time_seconds err_mu\n")
            for t, e in te_rows:
                fh.write(f"{t!r} {e!r}\n")
        written.append(path)
        series_te[tag] = te_rows
        path = out / f"{tag}.inner_iters.dat"
        with open(path, "w") as fh:
            fh.write("# outer_iteration inner_iterations\n")
            for k, L in ii_rows:
                fh.write(f"{k} {L}\n")
        written.append(path)
        series_ii[tag] = ii_rows

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for tag, rows in series_te.items():
        if rows:
            t, e = zip(*rows)
            ax.semilogy(t, e, marker="o", markersize=3, label=tag)
    ax.set_xlabel("time in seconds [s]")
    ax.set_ylabel("parameter error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
    p = out / "fig_time_error.svg"
    fig.savefig(p)
    plt.close(fig)
    written.append(p)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for tag, rows in series_ii.items():
        if rows:
            k, L = zip(*rows)
            ax.plot(k, L, marker="s", markersize=3, label=tag)
    ax.set_xlabel("outer TR iteration k")
    ax.set_ylabel("sub-problem iterations L")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=7)
    p = out / "fig_inner_iters.svg"
    fig.savefig(p)
    plt.close(fig)
    written.append(p)

    return [str(p) for p in written]
