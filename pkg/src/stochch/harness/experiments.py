"""Per-sample tasks and aggregation/check logic for each experiment kind.

Every kind provides
  * ``tasks(cfg)``      -> list of (ladder index, sample index) work items,
  * ``run_task(cfg, i, s, out_dir)`` -> JSON-able outcome dict (pure in (cfg, i, s)),
  * ``aggregate(cfg, outcomes)`` -> (aggregates, rate fits, verification records).

Outcomes arrive at ``aggregate`` sorted by (ladder index, sample index).
"""
from __future__ import annotations

import math
from dataclasses import asdict
from functools import lru_cache
from pathlib import Path

import numpy as np

from .. import analysis as an
from .. import dynamics as dy
from .. import profile as pr
from ..noise import NoiseSpec, RngStream, _frac_observable, _lp_power_observable, convolution_paths, eigen_partial_sums, trace_partial_sum
from ..spectral import GridSpec, SpectralField, norm_sup, write_snapshot
from .config import ExperimentConfig

DEFAULT_INTERFACE = {"kind": "circle", "centers": [[0.5, 0.5]], "radii": [0.25]}


# ---------------------------------------------------------------- shared helpers


def interface_from_options(opts: dict, d: int = 2) -> pr.Interface:
    spec = opts.get("interface") or DEFAULT_INTERFACE
    if d == 3 and spec is DEFAULT_INTERFACE:
        spec = {"kind": "sphere", "centers": [[0.5, 0.5, 0.5]], "radii": [0.25]}
    return pr.Interface(spec["kind"], tuple(map(tuple, spec["centers"])), tuple(spec["radii"]))


def ansatz(cfg: ExperimentConfig, epsilon: float, grid: GridSpec | None = None) -> tuple[pr.Interface, SpectralField]:
    grid = grid or cfg.model.grid()
    iface = interface_from_options(cfg.options, grid.d)
    cf = float(cfg.options.get("clearance_factor", 4.0))
    return iface, pr.tanh_profile(pr.ProfileParams(epsilon, iface, grid), clearance_factor=cf)


def initial_datum(cfg: ExperimentConfig, epsilon: float) -> tuple[SpectralField, pr.Interface | None]:
    grid = cfg.model.grid()
    init = cfg.options.get("initial", {"type": "tanh"})
    kind = init.get("type", "tanh")
    if kind == "tanh":
        iface, u = ansatz(cfg, epsilon, grid)
        return u, iface
    if kind == "constant":
        return SpectralField.constant(grid, float(init.get("value", 0.0))), None
    if kind == "zero":
        return SpectralField.zeros(grid), None
    if kind == "random":
        rng = RngStream(int(init.get("seed", 0)), 0).generator
        c = rng.standard_normal(grid.shape) * float(init.get("amplitude", 0.01))
        c[(0,) * grid.d] = float(init.get("mean", 0.0))
        return SpectralField(grid, c), None
    raise ValueError(f"unknown initial datum type {kind!r}")


@lru_cache(maxsize=8)
def reference_lambda_fit(n: int = 128, epsilon: float = 0.04, radius: float = 0.25, T: float = 0.01) -> float:
    """Gibbs-Thomson constant w = lam_fit * H from a relaxed single circle."""
    grid = GridSpec(2, n)
    iface = pr.Interface.circle((0.5, 0.5), radius)
    u0 = pr.tanh_profile(pr.ProfileParams(epsilon, iface, grid))
    params = dy.ModelParams(epsilon, grid, T / round(T / dy.recommended_dt(epsilon)), T)
    tr = dy.run(params, u0, stride=params.nsteps)
    u = tr.states[-1]
    ext = pr.interface_extract(u)
    w = dy.chemical_potential(u, epsilon)
    return pr.calibrate_gibbs_thomson(w, u, 1.0 / ext.components[0].radius)


def lambda_fit(cfg: ExperimentConfig) -> float:
    val = cfg.options.get("lam_fit")
    return float(val) if val is not None else reference_lambda_fit()


def _path(out_dir, name) -> Path | None:
    return None if out_dir is None else Path(out_dir) / name


def _monotone_decreasing(values) -> bool:
    v = list(values)
    return all(b < a for a, b in zip(v, v[1:]))


def _float_dict(d: dict) -> dict:
    return {k: float(v) for k, v in d.items()}


# ---------------------------------------------------------------- convolution-scaling


def _conv_tasks(cfg):
    return [(i, s) for i in range(len(cfg.epsilon_ladder)) for s in range(cfg.samples)]


def _conv_run(cfg, i, s, out_dir):
    eps = cfg.epsilon_ladder[i]
    p = float(cfg.options.get("p", 2))
    theta = float(cfg.options.get("theta", cfg.model.theta))
    noise = cfg.noise or NoiseSpec()
    dt = cfg.model.dt if cfg.model.dt is not None else cfg.model.dt_for(eps)
    obs = {"lp": _lp_power_observable(p), "frac": _frac_observable(theta, p)}
    paths = convolution_paths(cfg.model.grid(), noise, eps, cfg.model.T, dt, obs, cfg.base_seed, [s])
    return {"lp": float(paths["lp"].max()), "frac": float(paths["frac"].max())}


def _by_eps(cfg, outcomes, key):
    vals = [[] for _ in cfg.epsilon_ladder]
    for o in outcomes:
        if o["status"] == "ok":
            vals[o["eps_index"]].append(o["result"][key])
    return vals


def _mean_stats(vals):
    arr = np.asarray(vals, dtype=float)
    if arr.size == 0:
        return {"mean": float("nan"), "stderr": float("nan"), "n": 0}
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return {"mean": float(arr.mean()), "stderr": se, "n": int(arr.size)}


def _fit_record(name, cfg, points, expected, tol, stderrs):
    try:
        fit = an.rate_fit(points)
    except ValueError as exc:
        return None, an.VerificationRecord(name, {"expected": expected, "tol": tol}, None, None, None, False, len(points), None, {"error": str(exc)})
    fit_d = asdict(fit)
    fit_d["stderr"] = stderrs
    holds = expected is None or abs(fit.slope - expected) <= tol
    rec = an.VerificationRecord(
        name, {"ladder": cfg.epsilon_ladder, "expected_slope": expected, "tol": tol}, fit.slope, expected, None, bool(holds), cfg.samples, fit.slope_stderr
    )
    return fit_d, rec


def _conv_aggregate(cfg, outcomes):
    p = float(cfg.options.get("p", 2))
    noise = cfg.noise or NoiseSpec()
    expected = (noise.sigma - 0.5) * p
    tol = float(cfg.options.get("slope_tol", 0.2))
    aggs, fits, recs = {}, {}, []
    for key in ("lp", "frac"):
        stats = [_mean_stats(v) for v in _by_eps(cfg, outcomes, key)]
        aggs[key] = stats
        pts = [(e, st["mean"]) for e, st in zip(cfg.epsilon_ladder, stats)]
        fit, rec = _fit_record(f"convolution-scaling/{key}", cfg, pts, expected, tol, [st["stderr"] for st in stats])
        fits[key] = fit
        recs.append(rec)
    return aggs, fits, recs


# ---------------------------------------------------------------- simulate-type kinds


def _simulate_run(cfg, i, s, out_dir):
    eps = cfg.epsilon_ladder[i]
    stochastic = cfg.kind != "deterministic-ladder" and cfg.noise is not None
    params = cfg.params(eps, stochastic)
    u0, iface = initial_datum(cfg, eps)
    observers = []
    acc = None
    if iface is not None and cfg.kind in ("deterministic-ladder", "stochastic-error"):
        H = iface.mean_curvature()[0] if len(iface.radii) == 1 else None
        wA = SpectralField.constant(u0.grid, lambda_fit(cfg) * H) if H is not None else dy.chemical_potential(u0, eps)
        acc = an.ErrorAccumulator(lambda t, uA=u0, wA=wA: (uA, wA), eps, params.theta)
        observers.append(acc)
    stride = cfg.snapshot_stride if cfg.snapshot_stride > 0 else params.nsteps
    rng = RngStream(cfg.base_seed, s) if stochastic else None
    traj = dy.run(params, u0, observers=observers, rng=rng, stride=stride)
    tag = f"e{i}_s{s}"
    if out_dir is not None:
        dy.write_norm_csv(traj, _path(out_dir, f"series_{tag}.csv"))
        if cfg.snapshot_stride > 0:
            for k, (state, t) in enumerate(zip(traj.states, traj.state_times)):
                write_snapshot(state, _path(out_dir, f"snap_{tag}_{k:04d}.schf"))
    result = {
        "final_norms": {k: float(v[-1]) for k, v in traj.norms.items()},
        "mass_drift": float(abs(traj.norms["mean"][-1] - traj.norms["mean"][0])),
        "int_l3_cubed": float(traj.integrals["l3_cubed"][-1]),
    }
    if acc is not None:
        result["errors"] = _float_dict(acc.result())
    if cfg.kind == "energy-functional":
        result["E_p"] = an.regularity_value(traj, float(cfg.options.get("p", 2)), eps)
    if iface is not None and cfg.model.d == 2:
        final = traj.states[-1]
        try:
            ext = pr.interface_extract(final)
            result["radii"] = [float(r) for r in ext.radii]
            if out_dir is not None:
                pr.write_interface_csv(ext, _path(out_dir, f"interface_{tag}.csv"))
        except pr.NoInterfaceError:
            result["radii"] = []
    return result


def _simulate_aggregate(cfg, outcomes):
    aggs, fits, recs = {}, {}, []
    ok = [o for o in outcomes if o["status"] == "ok"]
    drift = max((o["result"]["mass_drift"] for o in ok), default=0.0)
    recs.append(an.VerificationRecord("mass-conservation", {}, drift, 1e-12, None, drift <= 1e-12, len(ok)))
    if cfg.kind in ("deterministic-ladder", "stochastic-error") and ok and "errors" in ok[0]["result"]:
        med = {}
        for key in an.ERROR_KEYS:
            per_eps = [[o["result"]["errors"][key] for o in ok if o["eps_index"] == i] for i in range(len(cfg.epsilon_ladder))]
            med[key] = [float(np.median(v)) if v else float("nan") for v in per_eps]
        aggs["median_errors"] = med
        for key, vals in med.items():
            holds = _monotone_decreasing(vals)
            recs.append(an.VerificationRecord(f"{cfg.kind}/{key}-decreasing", {"ladder": cfg.epsilon_ladder}, None, None, None, holds, cfg.samples, None, {"medians": vals}))
    if cfg.kind == "energy-functional":
        stats = [_mean_stats(v) for v in _by_eps(cfg, outcomes, "E_p")]
        aggs["E_p"] = stats
        min_exp = float(cfg.options.get("min_exponent", -1.3))
        pts = [(e, st["mean"]) for e, st in zip(cfg.epsilon_ladder, stats)]
        try:
            fit = an.rate_fit(pts)
            fits["E_p"] = {**asdict(fit), "stderr": [st["stderr"] for st in stats]}
            recs.append(an.VerificationRecord("energy-functional/exponent", {"min_exponent": min_exp}, fit.slope, min_exp, None, fit.slope >= min_exp, cfg.samples, fit.slope_stderr))
        except ValueError:
            pass
    return aggs, fits, recs


# ---------------------------------------------------------------- spectral-estimate


def _single_tasks(cfg):
    return [(i, 0) for i in range(len(cfg.epsilon_ladder))]


def _spectral_run(cfg, i, s, out_dir):
    eps = cfg.epsilon_ladder[i]
    _, uA = ansatz(cfg, eps)
    est = an.spectral_estimate(uA, eps, tol=float(cfg.options.get("tol", 1e-8)), max_iter=int(cfg.options.get("max_iter", 500)))
    return {"lambda_min": est.lambda_min, "residual": est.residual, "iterations": est.iterations}


def blowup_exponent_check(ladder, lambdas, bound=-0.5):
    """Exponent of max(0, -lambda_min) against eps; vacuous (holds) when never negative."""
    neg = [max(0.0, -l) for l in lambdas]
    positive = [(e, v) for e, v in zip(ladder, neg) if v > 0]
    if len(positive) < 3:
        return None, True
    fit = an.rate_fit(positive)
    return fit.slope, fit.slope > bound


def _spectral_aggregate(cfg, outcomes):
    lams = [o["result"]["lambda_min"] for o in outcomes if o["status"] == "ok"]
    slope, holds = blowup_exponent_check(cfg.epsilon_ladder, lams)
    C0 = max(0.0, -min(lams)) if lams else float("nan")
    rec = an.VerificationRecord(
        "spectral-estimate/no-blow-up", {"ladder": cfg.epsilon_ladder}, slope, -0.5, C0, holds, len(lams), None, {"lambda_min": lams}
    )
    return {"lambda_min": lams, "C0": C0}, {}, [rec]


# ---------------------------------------------------------------- interp-inequality

INTERP_RS = (2.25, 2.5, 8.0 / 3.0)
INTERP_ALPHAS = (0.0, 0.5, 1.0)


def _interp_tasks(cfg):
    return [(0, s) for s in range(2 * cfg.samples)]


def _interp_run(cfg, i, s, out_dir):
    grid = cfg.model.grid()
    v = an.random_mean_zero_field(grid, RngStream(cfg.base_seed, s).generator)
    rs = cfg.options.get("r_values", INTERP_RS)
    alphas = cfg.options.get("alpha_values", INTERP_ALPHAS)
    calib = s < cfg.samples
    fn = an.interp_ratio_sup if calib else an.interp_ratio
    ratios = [fn(v, r, a, e) for r in rs for a in alphas for e in cfg.epsilon_ladder]
    return {"role": "calibration" if calib else "test", "max_ratio": float(max(ratios))}


def _interp_aggregate(cfg, outcomes):
    safety = float(cfg.options.get("safety", 1.1))
    cal = [o["result"]["max_ratio"] for o in outcomes if o["status"] == "ok" and o["result"]["role"] == "calibration"]
    test = [o["result"]["max_ratio"] for o in outcomes if o["status"] == "ok" and o["result"]["role"] == "test"]
    CD = safety * max(cal)
    violations = int(sum(t > CD for t in test))
    rec = an.VerificationRecord(
        "interp-inequality", {"r": list(cfg.options.get("r_values", INTERP_RS)), "alpha": list(cfg.options.get("alpha_values", INTERP_ALPHAS)), "ladder": cfg.epsilon_ladder},
        max(test), CD, CD, violations == 0, len(test), None, {"violations": violations},
    )
    return {"CD": CD, "violations": violations, "max_test_ratio": max(test)}, {}, [rec]


# ---------------------------------------------------------------- apriori-check


def translated_run(cfg: ExperimentConfig, epsilon: float, sample: int | None, keep_states=False):
    """Y/Z trajectories around the tanh ansatz with w_A = lam_fit * H."""
    stochastic = cfg.noise is not None and sample is not None
    params = cfg.params(epsilon, stochastic)
    iface, uA = ansatz(cfg, epsilon)
    wA = pr.interface_potential(uA.grid, iface, lambda_fit(cfg))
    rA = pr.residual_rA(uA, wA, epsilon)
    rng = RngStream(cfg.base_seed, sample) if stochastic else None
    ty, tz = dy.run_translated(params, uA, rA, rng, keep_states=keep_states)
    return ty, tz, norm_sup(rA)


def _apriori_tasks(cfg):
    if cfg.noise is None:
        cal = cfg.options.get("calibration_ladder", [])
        return [(i, 0) for i in range(len(cfg.epsilon_ladder))] + [(-1 - j, 0) for j in range(len(cal))]
    return [(i, s) for i in range(len(cfg.epsilon_ladder)) for s in range(2 * cfg.samples)]


def _apriori_run(cfg, i, s, out_dir):
    if i < 0:
        eps = cfg.options["calibration_ladder"][-1 - i]
        role = "calibration"
    else:
        eps = cfg.epsilon_ladder[i]
        role = "calibration" if (cfg.noise is not None and s >= cfg.samples) else "test"
    ty, tz, rsup = translated_run(cfg, eps, s if cfg.noise is not None else None)
    gamma_margin = float(cfg.options.get("gamma_margin", 10.0))
    integral = float(ty.integrals["l3_cubed"][-1])
    gamma = math.log(gamma_margin * integral) / math.log(eps) if integral > 0 else 50.0
    return {
        "role": role,
        "epsilon": eps,
        "ratio": an.apriori_max_ratio(ty, tz, rsup, eps),
        "rA_sup": rsup,
        "int_l3_cubed": integral,
        "stopping_time": an.stopping_time(ty, gamma, eps),
        "T": ty.T,
    }


def _apriori_aggregate(cfg, outcomes):
    safety = float(cfg.options.get("safety", 1.1))
    ok = [o["result"] for o in outcomes if o["status"] == "ok"]
    cal = [r["ratio"] for r in ok if r["role"] == "calibration"]
    test = [r["ratio"] for r in ok if r["role"] == "test"]
    if not cal:
        raise ValueError("apriori-check needs a calibration set (noise samples or options.calibration_ladder)")
    C = safety * max(cal)
    holds = all(t <= C for t in test)
    recs = [an.VerificationRecord("apriori-check", {"ladder": cfg.epsilon_ladder}, max(test), C, C, holds, len(test), None, {"test_ratios": test})]
    stop_ok = all(r["stopping_time"] == r["T"] for r in ok)
    recs.append(an.VerificationRecord("stopping-time-equals-T", {"gamma_margin": cfg.options.get("gamma_margin", 10.0)}, None, None, None, stop_ok, len(ok)))
    return {"C": C, "max_calibration_ratio": max(cal), "max_test_ratio": max(test)}, {}, recs


# ---------------------------------------------------------------- event-probability


def _event_tasks(cfg):
    return [(i, s) for i in range(len(cfg.epsilon_ladder)) for s in range(2 * cfg.samples)]


def _event_run(cfg, i, s, out_dir):
    eps = cfg.epsilon_ladder[i]
    noise = cfg.noise or NoiseSpec(sigma=2.0)
    theta = cfg.event.theta if cfg.event is not None else cfg.model.theta
    dt = cfg.model.dt if cfg.model.dt is not None else cfg.model.T / 100
    st = an.ou_path_stats(cfg.model.grid(), noise, eps, cfg.model.T, dt, theta, cfg.base_seed, [s])[0]
    return {"role": "calibration" if s >= cfg.samples else "test", "sup_abs": st.sup_abs, "frac_sq_max": st.frac_sq_max}


def calibrate_C1(event: an.EventSpec, epsilon: float, sups, target: float = 0.9) -> float:
    """C1 such that a fraction ``target`` of the calibration sups meet the threshold."""
    scale = epsilon ** (event.sigma_star - 2 * event.delta - 2 * event.eta)
    return float(np.quantile(np.asarray(sups) / scale, target, method="higher"))


def _event_aggregate(cfg, outcomes):
    noise = cfg.noise or NoiseSpec(sigma=2.0)
    event = cfg.event or an.EventSpec(C1=1.0, delta=0.25, eta=0.0, sigma=noise.sigma)
    ok = [o for o in outcomes if o["status"] == "ok"]
    if cfg.options.get("calibrate", True):
        sups = [o["result"]["sup_abs"] for o in ok if o["eps_index"] == 0 and o["result"]["role"] == "calibration"]
        event = event.with_C1(calibrate_C1(event, cfg.epsilon_ladder[0], sups, float(cfg.options.get("target_p", 0.9))))
    phat = []
    for i, eps in enumerate(cfg.epsilon_ladder):
        stats = [an.PathStats(o["result"]["sup_abs"], o["result"]["frac_sq_max"]) for o in ok if o["eps_index"] == i and o["result"]["role"] == "test"]
        phat.append(an.event_probability(stats, event, eps, "omega"))
    holds = all(p2 >= p1 - 2 * max(se1, se2) for (p1, se1), (p2, se2) in zip(phat, phat[1:]))
    rec = an.VerificationRecord(
        "event-probability/monotone", {"ladder": cfg.epsilon_ladder, "event": asdict(event)}, None, None, event.C1, holds, cfg.samples,
        None, {"p_hat": [p for p, _ in phat], "stderr": [se for _, se in phat]},
    )
    return {"C1": event.C1, "p_hat": [p for p, _ in phat], "stderr": [se for _, se in phat]}, {}, [rec]


# ---------------------------------------------------------------- trace-check


def trace_dichotomy(d: int = 3, upsilon: float = 0.1, alpha_ref: float = -2.0, n_lo: int = 8, n_mid: int = 32, n_hi: int = 64):
    """Growth of the colored-noise trace sums and stabilisation of a convergent reference."""
    tr = trace_partial_sum(d, upsilon, n_mid)
    growth = tr[n_mid - 1] / tr[n_lo - 1] - 1.0
    ref = eigen_partial_sums(d, alpha_ref, n_hi)
    change = abs(ref[n_hi - 1] / ref[n_mid - 1] - 1.0)
    return {"growth": float(growth), "reference_change": float(change)}


def _trace_tasks(cfg):
    return []


def _trace_aggregate(cfg, outcomes):
    o = cfg.options
    res = trace_dichotomy(int(o.get("d", 3)), float(o.get("upsilon", 0.1)), float(o.get("alpha_ref", -2.0)))
    recs = [
        an.VerificationRecord("trace/divergent-growth", {"d": o.get("d", 3), "upsilon": o.get("upsilon", 0.1)}, res["growth"], 0.5, None, res["growth"] >= 0.5),
        an.VerificationRecord("trace/reference-stable", {"alpha": o.get("alpha_ref", -2.0)}, res["reference_change"], 0.05, None, res["reference_change"] < 0.05),
    ]
    return res, {}, recs


KIND_TABLE = {
    "convolution-scaling": (_conv_tasks, _conv_run, _conv_aggregate),
    "energy-functional": (_conv_tasks, _simulate_run, _simulate_aggregate),
    "deterministic-ladder": (_single_tasks, _simulate_run, _simulate_aggregate),
    "stochastic-error": (_conv_tasks, _simulate_run, _simulate_aggregate),
    "spectral-estimate": (_single_tasks, _spectral_run, _spectral_aggregate),
    "interp-inequality": (_interp_tasks, _interp_run, _interp_aggregate),
    "apriori-check": (_apriori_tasks, _apriori_run, _apriori_aggregate),
    "event-probability": (_event_tasks, _event_run, _event_aggregate),
    "trace-check": (_trace_tasks, None, _trace_aggregate),
}
