"""Pipeline orchestration: offline conditioning, online runs, sweeps, MC studies.

Outputs are plain CSV/JSON files (17-significant-digit floats); plotting is
left to external tools.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from . import conditioning, hilbert_gp, models, particle_filter
from .config import ScenarioConfig, config_to_dict
from .models import BatteryParams, TargetFunction


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, (str, int)) else _fmt(v) for v in row])


def function_error(estimate_evaluator, true_function, grid) -> float:
    """Root-mean-square gap between estimate and truth on an evaluation grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("evaluation grid must be nonempty")
    est = np.asarray(estimate_evaluator(grid), dtype=float)
    tru = np.asarray(true_function(grid), dtype=float)
    return float(np.sqrt(np.mean((est - tru) ** 2)))


@dataclass
class OfflineArtifacts:
    """Everything produced by the conditioning pipeline."""

    spec: hilbert_gp.BasisSpec
    gp_models: list
    stack: conditioning.CoefficientStack
    basis: conditioning.ConditionedBasis
    scree: list
    hyper: hilbert_gp.Hyperparameters


def _offline_domain(cfg: ScenarioConfig, data_lo: float, data_hi: float) -> hilbert_gp.Domain:
    off = cfg.offline
    if off.domain_lower is not None and off.domain_upper is not None:
        return hilbert_gp.Domain(lower=np.array([off.domain_lower]), upper=np.array([off.domain_upper]))
    pad = 0.5 * off.padding * (data_hi - data_lo)  # widen the range by `padding` total
    return hilbert_gp.Domain(lower=np.array([data_lo - pad]), upper=np.array([data_hi + pad]))


def _data_range(family: str) -> tuple[float, float]:
    return (0.0, 1.0) if family == "battery_alpha" else (-15.0, 15.0)


def offline_pipeline(cfg: ScenarioConfig, out_dir=None) -> OfflineArtifacts:
    """Capture the target family, fit coefficients, condition by SVD.

    Generates the offline dataset, optionally optimizes hyperparameters,
    fits one coefficient vector per realization, stacks them and truncates
    the SVD to an explicit rank or by the energy-threshold rule. Artifacts
    are persisted under out_dir when given.
    """
    off = cfg.offline
    lo, hi = _data_range(cfg.model.family)
    datasets = models.generate_offline_dataset(
        cfg.model.family, off.J, off.K, off.sigma_xi, (lo, hi), off.seed, grid=off.grid
    )
    domain = _offline_domain(cfg, lo, hi)
    hyper = hilbert_gp.Hyperparameters(
        signal_variance=off.sigma2, lengthscale=off.lengthscale, noise_variance=off.sigma_xi2_fit
    )
    spec = hilbert_gp.make_basis_spec(domain, off.N, hyper)
    if off.optimize_hyper:
        hyper = hilbert_gp.optimize_hyperparameters(spec, datasets)
        spec = hilbert_gp.make_basis_spec(domain, off.N, hyper)
    gp_models = [hilbert_gp.fit_coefficients(spec, x, y) for x, y in datasets]
    stack = conditioning.stack_coefficients(gp_models, realization_ids=range(1, off.J + 1))
    scree = conditioning.scree_rows(stack)
    if off.energy_threshold is not None:
        rank = conditioning.choose_rank(stack, off.energy_threshold)
    else:
        rank = min(off.M, min(off.J, off.N))
    basis = conditioning.svd_condition(stack, rank)
    artifacts = OfflineArtifacts(
        spec=spec, gp_models=gp_models, stack=stack, basis=basis, scree=scree, hyper=hyper
    )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for j, model in enumerate(gp_models, start=1):
            hilbert_gp.save_model(model, os.path.join(out_dir, f"gp_model_{j:03d}.json"))
        conditioning.save_basis(basis, os.path.join(out_dir, "conditioned_basis.json"))
        write_csv(
            os.path.join(out_dir, "scree.csv"),
            ["m", "sigma_m", "cumulative_energy"],
            scree,
        )
    return artifacts


def refit_truncated(spec: hilbert_gp.BasisSpec, d: int, x, y) -> hilbert_gp.HilbertGpModel:
    """Refit using only the d highest-priority original basis functions."""
    sub = hilbert_gp.BasisSpec(
        domain=spec.domain, count=d, indices=spec.indices[:d], hyper=spec.hyper
    )
    return hilbert_gp.fit_coefficients(sub, x, y)


def dof_error_sweep(cfg: ScenarioConfig, out_dir=None):
    """Approximation error of original vs conditioned expansions per DOF count.

    For each DOF count d, the original expansion refits the d highest-priority
    basis functions per realization; the conditioned expansion truncates the
    SVD to rank d and projects each full coefficient vector. Returns
    (rows, artifacts) where each row is
    (d, mean_error_original, mean_error_conditioned, per-j errors...).
    """
    artifacts = offline_pipeline(cfg)
    off, sw = cfg.offline, cfg.sweep
    lo, hi = _data_range(cfg.model.family)
    grid = np.linspace(lo, hi, sw.error_grid)
    datasets = models.generate_offline_dataset(
        cfg.model.family, off.J, off.K, off.sigma_xi, (lo, hi), off.seed, grid=off.grid
    )
    rows = []
    d_values = list(range(1, sw.d_max + 1))
    if sw.d_max < min(off.J, off.N):
        d_values.append(min(off.J, off.N))  # include the full-rank recovery point
    for d in d_values:
        err_orig, err_cond = [], []
        basis_d = conditioning.svd_condition(artifacts.stack, min(d, min(off.J, off.N)))
        for idx, ((x, y), model) in enumerate(zip(datasets, artifacts.gp_models)):
            sub = refit_truncated(artifacts.spec, min(d, off.N), x, y)
            est_o = lambda g, m=sub: hilbert_gp.evaluate_expansion(m, g[:, None])
            v = conditioning.project(basis_d, model.w)
            est_c = lambda g, b=basis_d, vv=v: conditioning.evaluate_reduced(b, vv, g[:, None])
            target = TargetFunction(family=cfg.model.family, j=artifacts.stack.realization_ids[idx])
            err_orig.append(function_error(est_o, target, grid))
            err_cond.append(function_error(est_c, target, grid))
        rows.append((d, float(np.mean(err_orig)), float(np.mean(err_cond)), *err_orig, *err_cond))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        J = off.J
        header = (
            ["dof", "mean_error_original", "mean_error_conditioned"]
            + [f"error_original_j{j}" for j in range(1, J + 1)]
            + [f"error_conditioned_j{j}" for j in range(1, J + 1)]
        )
        write_csv(os.path.join(out_dir, "dof_sweep.csv"), header, rows)
    return rows, artifacts


def make_battery_filter_model(
    params: BatteryParams,
    dt: float,
    basis: conditioning.ConditionedBasis,
    c: float,
    q_diag: float,
    sigma_power: int = 2,
) -> particle_filter.AugmentedStateModel:
    """Augmented-state model: RK4 battery dynamics with the learned alpha nested."""

    def rhs(x, u, alpha):
        a = alpha[..., 0] if np.ndim(alpha) > 1 else alpha
        return models.battery_rhs(x, u, a, params, validate=False)

    def dynamics(X, u, xi):
        return models.rk4_step(rhs, X, u, dt, xi)

    def measurement(X, u):
        return models.battery_measurement(X, u, params, validate=False)

    return particle_filter.AugmentedStateModel(
        dynamics=dynamics,
        measurement=measurement,
        conditioned_bases=(basis,),
        Q=q_diag * np.eye(3),
        c=c,
        n_y=3,
        xi_input=lambda X: X[:, :1],
        sigma_power=sigma_power,
    )


@dataclass
class RunRecord:
    """Per-step metrics of one online run plus its outcome."""

    steps: list = field(default_factory=list)  # list of per-step dict rows
    failed: bool = False
    failure_step: int | None = None
    wall_time_s: float = 0.0

    def column(self, name) -> np.ndarray:
        return np.array([row[name] for row in self.steps])


STEP_COLUMNS = (
    ["step", "x_hat_0", "x_hat_1", "x_hat_2"],
    ["ess", "mean_nu", "logevidence_increment", "wall_time_us", "func_error", "state_rmse"],
)


def run_online_scenario(cfg: ScenarioConfig, artifacts: OfflineArtifacts, run_seed: int, out_dir=None) -> RunRecord:
    """Simulate the truth and filter it step-by-step under the online contract.

    The filter consumes only (u_{k-1}, y_k, u_k) per step. Records the
    learned-function RMS error on a 201-point grid of the target's domain,
    the state estimation error, ESS, and wall time per step.
    """
    sch, fl, off = cfg.schedule, cfg.filter, cfg.offline
    params = cfg.model.battery
    x0 = np.asarray(sch.x0, dtype=float)
    Q = fl.q_diag * np.eye(3)
    R = fl.r_diag * np.eye(3)
    j_schedule = lambda k: sch.j_before if k < sch.switch_step else sch.j_after
    input_schedule = models.make_input_schedule(sch.input_amplitude, sch.input_offset, sch.input_frequency)
    traj = models.simulate(
        params, x0, input_schedule, Q, R, j_schedule, sch.dt, sch.steps, seed=run_seed
    )

    basis = artifacts.basis
    if fl.use_original_basis:
        basis = _identity_basis(artifacts)
    model = make_battery_filter_model(params, sch.dt, basis, fl.c, fl.q_diag, fl.sigma_power)

    j_init_idx = int(round(sch.j_init)) - 1
    w_init = artifacts.gp_models[j_init_idx].w
    v_init = conditioning.project(basis, w_init)
    prior_mean = np.concatenate([x0, v_init])
    prior_cov = sla.block_diag(
        fl.prior_x_std**2 * np.eye(3), np.diag(fl.c * basis.singular_values**fl.sigma_power)
    )
    ps = particle_filter.init_particles(
        model, prior_mean, prior_cov, fl.nu0, fl.lambda0_diag * np.eye(3), fl.num_particles, fl.seed + run_seed
    )

    grid = np.linspace(0.0, 1.0, 201)
    rho_grid = conditioning.evaluate_rho(basis, grid[:, None])  # (201, M)

    record = RunRecord()
    t_start = time.perf_counter()
    for k in range(1, sch.steps + 1):
        u_prev = traj.inputs[k - 1]
        u_now = float(input_schedule(k * sch.dt))
        y_now = traj.outputs[k]
        t0 = time.perf_counter()
        try:
            ps, rec = particle_filter.step(ps, model, u_prev, y_now, fl.lambda_f, u_now=u_now)
        except particle_filter.FilterDivergenceError as exc:
            record.failed = True
            record.failure_step = exc.step
            break
        wall_us = (time.perf_counter() - t0) * 1e6
        j_k = j_schedule(k)
        est = rho_grid @ rec["v_hat"][0]
        ferr = float(np.sqrt(np.mean((est - models.true_alpha(grid, j_k)) ** 2)))
        serr = float(np.sqrt(np.mean((rec["x_hat"] - traj.states[k]) ** 2)))
        row = {
            "step": k,
            "x_hat_0": rec["x_hat"][0],
            "x_hat_1": rec["x_hat"][1],
            "x_hat_2": rec["x_hat"][2],
            "ess": rec["ess"],
            "mean_nu": rec["mean_nu"],
            "logevidence_increment": rec["logevidence_increment"],
            "wall_time_us": wall_us,
            "func_error": ferr,
            "state_rmse": serr,
        }
        for i, v in enumerate(rec["v_hat"][0]):
            row[f"v_hat_{i}"] = float(v)
        record.steps.append(row)
    record.wall_time_s = time.perf_counter() - t_start

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_steps_csv(os.path.join(out_dir, "steps.csv"), record, basis.M)
    return record


def _identity_basis(artifacts: OfflineArtifacts) -> conditioning.ConditionedBasis:
    """Baseline basis: learn the full coefficient vector w directly (N DOF).

    Exploration noise falls back to the prior spectral weights rescaled to
    the leading singular value, since the stack provides at most J directions.
    """
    spec = artifacts.spec
    s = hilbert_gp.spectral_weights(spec)
    lead = np.linalg.svd(artifacts.stack.W, compute_uv=False)[0]
    scale = float(lead) / float(s[0])
    return conditioning.ConditionedBasis(
        spec=spec,
        Z_M=np.eye(spec.count),
        singular_values=np.sort(s * scale)[::-1],
        explained_energy=1.0,
    )


def _write_steps_csv(path, record: RunRecord, m: int) -> None:
    header = (
        STEP_COLUMNS[0]
        + [f"v_hat_{i}" for i in range(m)]
        + STEP_COLUMNS[1]
    )
    rows = [[row[h] for h in header] for row in record.steps]
    write_csv(path, header, rows)


def read_steps_csv(path):
    """Per-step metrics back from disk as {column: ndarray}."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = {h: [] for h in header}
        for row in reader:
            for h, v in zip(header, row):
                cols[h].append(float(v))
    return {h: np.asarray(v) for h, v in cols.items()}


@dataclass
class McSummary:
    """Aggregate of a Monte-Carlo study."""

    mean: dict  # column -> (steps,) mean over successful runs
    std: dict  # column -> (steps,) std over successful runs
    runs: int
    failures: int

    @property
    def failure_rate(self) -> float:
        return self.failures / self.runs


MC_COLUMNS = ("func_error", "state_rmse", "ess", "mean_nu")


def monte_carlo_study(cfg: ScenarioConfig, runs: int, base_seed: int, out_dir=None) -> McSummary:
    """Run the online scenario `runs` times with seeds base_seed + r.

    Failed runs (filter divergence or simulation errors) are excluded from
    the per-step mean/std and counted into the failure rate. Writes one
    steps.csv per run plus mc_summary.csv and the resolved config.
    """
    if runs < 1:
        raise ValueError("need at least one run")
    artifacts = offline_pipeline(cfg, out_dir=os.path.join(out_dir, "offline") if out_dir else None)
    records, failures = [], 0
    for r in range(runs):
        run_dir = os.path.join(out_dir, f"run_{r:03d}") if out_dir else None
        try:
            rec = run_online_scenario(cfg, artifacts, base_seed + r, out_dir=run_dir)
        except models.SimulationError:
            failures += 1
            continue
        if rec.failed or len(rec.steps) < cfg.schedule.steps:
            failures += 1
            continue
        records.append(rec)
        if not cfg.output.quiet:
            print(f"run {r}: final func_error {rec.steps[-1]['func_error']:.4g}", flush=True)
    if not records:
        raise RuntimeError("every Monte-Carlo run failed")

    mean, std = {}, {}
    for col in MC_COLUMNS:
        data = np.vstack([rec.column(col) for rec in records])
        mean[col] = data.mean(axis=0)
        std[col] = data.std(axis=0)
    summary = McSummary(mean=mean, std=std, runs=runs, failures=failures)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        header = ["step"] + [f"mean_{c}" for c in MC_COLUMNS] + [f"std_{c}" for c in MC_COLUMNS]
        steps = np.arange(1, cfg.schedule.steps + 1)
        rows = [
            [int(k)]
            + [mean[c][i] for c in MC_COLUMNS]
            + [std[c][i] for c in MC_COLUMNS]
            for i, k in enumerate(steps)
        ]
        write_csv(os.path.join(out_dir, "mc_summary.csv"), header, rows)
        with open(os.path.join(out_dir, "mc_meta.json"), "w") as fh:
            json.dump(
                {"runs": runs, "failures": failures, "failure_rate": summary.failure_rate, "base_seed": base_seed},
                fh,
                indent=1,
            )
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            json.dump(config_to_dict(cfg), fh, indent=1, sort_keys=True)
    return summary
