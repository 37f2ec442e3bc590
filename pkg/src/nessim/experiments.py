"""Experiment drivers: one function per CLI experiment kind.

Each driver takes a resolved :class:`~nessim.config.ExperimentConfig`,
runs the computation (parallelizing ensembles over ``threads`` worker
threads with deterministic assembly), writes its CSV artifacts into the
output directory and returns a JSON-serializable results dict.  CSV
files use comma separators, ``.`` decimals, LF line endings and
17-significant-digit floats, so reruns with the same seed are
byte-identical.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .chain_model import State, index_map, state_dim
from .config import ExperimentConfig
from .ergodics import (autocovariance, batch_means, estimate_acf_period,
                       estimator_report, fit_decay_rate,
                       fit_oscillatory_decay_rate, heat_flux_series,
                       hitting_times, liapunov_drift)
from .hypoellipticity import hormander_rank
from .linear_oracle import (LinearModel, linearize, spectral_gap,
                            stationary_covariance)
from .scaling_analysis import (dissipation_scan, sample_energy_shell,
                               tracking_deviation)
from .sde_dynamics import Trajectory, simulate, suggest_dt
from .seeding import make_rng, split_seed


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return f"{float(value):.17g}"


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _pool(threads: int):
    return ThreadPoolExecutor(max_workers=threads) if threads > 1 else nullcontext()


def _second_moments(traj: Trajectory, burn_records: int):
    """Empirical second-moment matrix with per-entry batch-means stderr."""
    x = traj.state_matrix()[burn_records:]
    n, m = x.shape
    batches = 100
    size = n // batches
    x = x[: size * batches]
    prods = np.einsum("bsi,bsj->bij", x.reshape(batches, size, m),
                      x.reshape(batches, size, m)) / size
    mean = prods.mean(axis=0)
    stderr = prods.std(axis=0, ddof=1) / math.sqrt(batches)
    return mean, stderr


def _covariance_comparison(lm: LinearModel, mean, stderr,
                           rel_tol: float = 0.05, sig_factor: float = 4.0):
    sigma = stationary_covariance(lm)
    tol = np.maximum(rel_tol * np.abs(sigma), sig_factor * stderr)
    ok = np.abs(mean - sigma) <= tol
    return sigma, ok


def _moment_rows(mean, stderr, sigma=None, ok=None):
    m = mean.shape[0]
    rows = []
    for i in range(m):
        for j in range(i, m):
            row = [i, j, mean[i, j], stderr[i, j]]
            if sigma is not None:
                row += [sigma[i, j], int(ok[i, j])]
            rows.append(row)
    return rows


def _equilibrium_like(cfg: ExperimentConfig, outdir: Path) -> dict:
    model = cfg.model
    x0 = State.zeros(model.params)
    traj = simulate(model, x0, cfg.integrator)
    burn_records = cfg.options["burn_in_steps"] // cfg.integrator.thin
    mean, stderr = _second_moments(traj, burn_records)

    results: dict = {"n_records": len(traj), "burn_records": burn_records}
    header = ["i", "j", "moment", "stderr"]
    if model.spec.is_quadratic():
        lm = linearize(model)
        sigma, ok = _covariance_comparison(lm, mean, stderr)
        rows = _moment_rows(mean, stderr, sigma, ok)
        header += ["oracle", "ok"]
        results["oracle_comparison"] = {
            "entries": int(ok.size),
            "entries_ok": int(ok.sum()),
            "all_ok": bool(ok.all()),
        }
    else:
        rows = _moment_rows(mean, stderr)
        idx = index_map(model.params)
        n_used = len(traj) - burn_records
        reports = []
        for block in ("p", "r"):
            if block not in idx:
                continue
            for i in range(idx[block].start, idx[block].stop):
                name = f"{block}_{i - idx[block].start + 1}_sq"
                reports.append(estimator_report(name, mean[i, i],
                                                stderr[i, i], n_used,
                                                burn_records))
        results["second_moment_estimates"] = reports
    write_csv(outdir / "moments.csv", header, rows)

    if cfg.kind == "ness":
        phi_l, phi_r = heat_flux_series(traj, model)
        n_used = len(phi_l) - burn_records
        ml, sl = batch_means(phi_l[burn_records:])
        mr, sr = batch_means(phi_r[burn_records:])
        ms, ss = batch_means((phi_l + phi_r)[burn_records:])
        write_csv(outdir / "flux.csv",
                  ["side", "mean", "stderr"],
                  [["left", ml, sl], ["right", mr, sr], ["sum", ms, ss]])
        results["flux"] = [
            estimator_report("phi_left", ml, sl, n_used, burn_records),
            estimator_report("phi_right", mr, sr, n_used, burn_records),
            estimator_report("phi_sum", ms, ss, n_used, burn_records,
                             balance_sigma=abs(ms) / ss if ss > 0 else 0.0),
        ]
    if cfg.options.get("write_trajectory"):
        traj.to_csv(outdir / "trajectory.csv")
    return results


def run_equilibrium(cfg: ExperimentConfig, outdir: Path) -> dict:
    return _equilibrium_like(cfg, outdir)


def run_ness(cfg: ExperimentConfig, outdir: Path) -> dict:
    return _equilibrium_like(cfg, outdir)


def run_dissipation_scaling(cfg: ExperimentConfig, outdir: Path) -> dict:
    model = cfg.model
    energies = [float(v) for v in cfg.options["energies"].split(",")]
    coeff = cfg.options["dt_coeff"]
    with _pool(cfg.threads) as pool:
        report = dissipation_scan(
            model, energies, tau=cfg.options["tau"],
            samples_per_e=cfg.options["samples_per_e"],
            dt_policy=lambda e: suggest_dt(e, model.k2, c=coeff),
            seed=cfg.seed, executor=pool if cfg.threads > 1 else None)
    write_csv(outdir / "dissipation.csv",
              ["E", "dG", "t_E", "status"],
              [[s.energy, s.delta_g, s.t_e, s.status] for s in report.samples])
    return report.as_dict()


def run_tracking(cfg: ExperimentConfig, outdir: Path) -> dict:
    model = cfg.model
    energies = [float(v) for v in cfg.options["energies"].split(",")]
    paths = cfg.options["paths_per_e"]
    coeff = cfg.options["dt_coeff"]
    policy = lambda e: suggest_dt(e, model.k2, c=coeff)
    tasks = [(e, k) for e in energies for k in range(paths)]

    def run_one(task):
        energy, k = task
        return tracking_deviation(model, energy, tau=cfg.options["tau"],
                                  seed=split_seed(cfg.seed, k), dt_policy=policy)

    with _pool(cfg.threads) as pool:
        if cfg.threads > 1:
            reports = list(pool.map(run_one, tasks))
        else:
            reports = [run_one(t) for t in tasks]
    write_csv(outdir / "tracking.csv",
              ["E", "dq", "dp", "dr", "omega_max", "in_good_set"],
              [[r.energy, r.sup_dq, r.sup_dp, r.sup_dr, r.omega_max,
                int(r.in_good_set)] for r in reports])
    results: dict = {"energies": energies, "paths_per_e": paths}
    med = {}
    for e in energies:
        sub = [r for r in reports if r.energy == e]
        med[e] = {
            "dp_over_dr": float(np.median([r.sup_dp / r.sup_dr for r in sub])),
            "dq_over_dr": float(np.median([r.sup_dq / r.sup_dr for r in sub])),
        }
    results["median_ratios"] = {f"{e:g}": v for e, v in med.items()}
    if len(energies) == 2:
        e1, e2 = energies
        results["ratio_scaling"] = {
            "dp_measured": med[e2]["dp_over_dr"] / med[e1]["dp_over_dr"],
            "dp_predicted": (e2 / e1) ** (1.0 / model.k2 - 0.5),
            "dq_measured": med[e2]["dq_over_dr"] / med[e1]["dq_over_dr"],
            "dq_predicted": (e2 / e1) ** (2.0 / model.k2 - 1.0),
        }
    return results


def run_liapunov(cfg: ExperimentConfig, outdir: Path) -> dict:
    model = cfg.model
    opts = cfg.options
    dt = opts["dt"] if opts["dt"] > 0 else None
    rows = []
    confirmed = 0
    bound = math.exp(model.params.gamma * model.params.temperature_trace
                     * opts["theta"] * opts["s"])
    with _pool(cfg.threads) as pool:
        for i in range(opts["n_states"]):
            rng = make_rng(cfg.seed, stream_id=i)
            x = sample_energy_shell(model, opts["energy"], rng, mode="full")
            est = liapunov_drift(
                model, x, s=opts["s"], theta=opts["theta"],
                n_samples=opts["n_samples"],
                seeds=[split_seed(cfg.seed, i * 100_000 + k)
                       for k in range(opts["n_samples"])],
                dt=dt, executor=pool if cfg.threads > 1 else None)
            confirmed += est.drift_confirmed
            rows.append([i, est.g0, est.kappa_hat, est.stderr,
                         int(est.drift_confirmed)])
    write_csv(outdir / "liapunov.csv",
              ["state", "G0", "kappa_hat", "stderr", "confirmed"], rows)
    kappas = [r[2] for r in rows]
    return {
        "n_states": opts["n_states"],
        "theta": opts["theta"],
        "s": opts["s"],
        "energy": opts["energy"],
        "confirmed": confirmed,
        "kappa_max": max(kappas),
        "kappa_mean": float(np.mean(kappas)),
        "apriori_bound": bound,
    }


def run_hitting(cfg: ExperimentConfig, outdir: Path) -> dict:
    model = cfg.model
    opts = cfg.options
    results: dict = {}
    e0 = opts["e0"]
    if e0 <= 0:
        pilot_cfg = cfg.integrator
        pilot = simulate(model, State.zeros(model.params),
                         type(pilot_cfg)(scheme=pilot_cfg.scheme,
                                         dt=pilot_cfg.dt,
                                         steps=opts["pilot_steps"],
                                         seed=split_seed(cfg.seed, 987),
                                         thin=pilot_cfg.thin,
                                         blowup_threshold=pilot_cfg.blowup_threshold))
        burn = len(pilot) // 10
        e0 = float(np.quantile(pilot.energy[burn:], opts["e0_quantile"]))
        results["pilot_quantile"] = opts["e0_quantile"]
    results["e0"] = e0
    rng = make_rng(cfg.seed, stream_id=31337)
    x0 = sample_energy_shell(model, opts["energy_factor"] * e0, rng, mode="full")
    dt = opts["dt"] if opts["dt"] > 0 else None
    with _pool(cfg.threads) as pool:
        report = hitting_times(model, x0, e0, n_samples=opts["n_samples"],
                               a=opts["a"], t_max=opts["t_max"], dt=dt,
                               seed=cfg.seed,
                               executor=pool if cfg.threads > 1 else None)
    write_csv(outdir / "hitting.csv", ["sample", "tau", "censored"],
              [[k, t, 0] for k, t in enumerate(np.sort(report.taus))]
              + [[len(report.taus) + k, report.t_max, 1]
                 for k in range(report.censored)])
    ts, surv = report.survival_curve()
    write_csv(outdir / "survival.csv", ["t", "survival"],
              [[t, s] for t, s in zip(ts, surv)])
    results.update(report.as_dict())
    return results


def run_rank(cfg: ExperimentConfig, outdir: Path) -> dict:
    model = cfg.model
    opts = cfg.options
    params = model.params
    rng = make_rng(cfg.seed)
    rows = []
    for i in range(opts["n_points"]):
        x = State(
            p=opts["radius"] * rng.standard_normal((params.n, params.d)),
            q=opts["radius"] * rng.standard_normal((params.n, params.d)),
            r=opts["radius"] * rng.standard_normal((2, params.d)),
            s=(opts["radius"] * rng.standard_normal((2, params.d))
               if params.reservoir_kind == "ou2" else None),
        )
        res = hormander_rank(model, x, max_depth=opts["max_depth"])
        rows.append([i, res.rank, res.depth_reached])
    write_csv(outdir / "rank.csv", ["point", "rank", "depth"], rows)
    ranks = [r[1] for r in rows]
    return {
        "n_points": opts["n_points"],
        "full_dim": state_dim(params),
        "min_rank": min(ranks),
        "max_depth": opts["max_depth"],
        "n_full": sum(1 for r in ranks if r == state_dim(params)),
    }


def run_oracle_compare(cfg: ExperimentConfig, outdir: Path) -> dict:
    model = cfg.model
    lm = linearize(model)
    sigma = stationary_covariance(lm)
    gap = spectral_gap(lm)
    m = lm.dim
    write_csv(outdir / "drift_matrix.csv",
              [f"c{j}" for j in range(m)], [list(row) for row in lm.a])
    write_csv(outdir / "sigma.csv",
              [f"c{j}" for j in range(m)], [list(row) for row in sigma])
    results = {"dim": m, "spectral_gap": gap,
               "sigma_trace": float(np.trace(sigma))}
    if cfg.options["simulate"]:
        traj = simulate(model, State.zeros(model.params), cfg.integrator)
        burn_records = cfg.options["burn_in_steps"] // cfg.integrator.thin
        mean, stderr = _second_moments(traj, burn_records)
        _, ok = _covariance_comparison(lm, mean, stderr)
        write_csv(outdir / "moments.csv",
                  ["i", "j", "moment", "stderr", "oracle", "ok"],
                  _moment_rows(mean, stderr, sigma, ok))
        results["oracle_comparison"] = {
            "entries": int(ok.size), "entries_ok": int(ok.sum()),
            "all_ok": bool(ok.all()),
        }
    return results


def _observable_column(traj: Trajectory, params, name: str) -> np.ndarray:
    parts = name.split("_")
    if len(parts) != 3:
        raise ValueError(f"observable {name!r}; expected like 'q_1_1'")
    block, site, dim = parts[0], int(parts[1]) - 1, int(parts[2]) - 1
    arrays = {"p": traj.p, "q": traj.q, "r": traj.r}
    if traj.s is not None:
        arrays["s"] = traj.s
    if block not in arrays:
        raise ValueError(f"unknown observable block {block!r}")
    return arrays[block][:, site, dim]


def run_correlation(cfg: ExperimentConfig, outdir: Path) -> dict:
    model = cfg.model
    traj = simulate(model, State.zeros(model.params), cfg.integrator)
    burn_records = cfg.options["burn_in_steps"] // cfg.integrator.thin
    series = _observable_column(traj, model.params, cfg.options["observable"])
    series = series[burn_records:]
    sample_dt = cfg.integrator.dt * cfg.integrator.thin
    max_lag = min(int(cfg.options["max_lag_time"] / sample_dt), len(series) - 1)
    acf = autocovariance(series, max_lag)
    write_csv(outdir / "acf.csv", ["lag_time", "acf"],
              [[k * sample_dt, v] for k, v in enumerate(acf)])
    lo = int(cfg.options["fit_lo"] / sample_dt)
    hi = max(lo + 3, int(cfg.options["fit_hi"] / sample_dt))
    results: dict = {"observable": cfg.options["observable"],
                     "lag0": float(acf[0]), "max_lag": max_lag}
    try:
        rate, ci = fit_decay_rate(acf, (lo, hi), dt=sample_dt)
        results["fit_kind"] = "log-linear"
    except ValueError:
        # oscillatory ACF: fit the half-period envelope instead
        period = estimate_acf_period(acf, sample_dt)
        if period is None:
            results["decay_rate_error"] = "acf neither positive nor oscillatory"
            rate = None
        else:
            rate, ci = fit_oscillatory_decay_rate(
                acf, (cfg.options["fit_lo"], cfg.options["fit_hi"]),
                sample_dt, period)
            results["fit_kind"] = "envelope"
            results["period"] = period
    if rate is not None:
        results["decay_rate"] = rate
        results["decay_rate_ci"] = ci
    if model.spec.is_quadratic():
        results["oracle_gap"] = spectral_gap(linearize(model))
    return results


RUNNERS = {
    "equilibrium": run_equilibrium,
    "ness": run_ness,
    "dissipation-scaling": run_dissipation_scaling,
    "tracking": run_tracking,
    "liapunov": run_liapunov,
    "hitting": run_hitting,
    "rank": run_rank,
    "oracle-compare": run_oracle_compare,
    "correlation": run_correlation,
}
