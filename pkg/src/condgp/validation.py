"""Built-in invariant suite behind the `validate` CLI subcommand.

Each check returns (name, passed, detail). The suite covers the
orthonormality and distance identities of the conditioned basis, RK4 order,
particle-filter bookkeeping (weight normalization, SPD noise statistics,
the exact nu recursion without forgetting), determinism under fixed seeds,
a Kalman cross-check on a linear-Gaussian model, and the online causality
contract.
"""

from __future__ import annotations

import numpy as np

from . import conditioning, harness, models, particle_filter
from .config import default_battery_config, default_sinc_config


def _sinc_artifacts():
    cfg = default_sinc_config()
    return harness.offline_pipeline(cfg)


def check_basis_orthonormality():
    art = _sinc_artifacts()
    basis = conditioning.svd_condition(art.stack, 6)
    defect = conditioning.orthonormality_defect(basis, 20001)
    return "basis_orthonormality_defect", defect <= 1e-6, f"defect={defect:.3e} (<= 1e-6)"


def check_distance_equality():
    art = _sinc_artifacts()
    basis = conditioning.svd_condition(art.stack, 6)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        w = rng.standard_normal(art.spec.count)
        v = rng.standard_normal(basis.M)
        coef = conditioning.subspace_distance(basis, w, v)
        quad = conditioning.quadrature_function_distance(basis, w, v, 20001)
        worst = max(worst, abs(quad - coef) / coef)
    return "coefficient_vs_function_distance", worst <= 1e-4, f"max rel gap={worst:.3e} (<= 1e-4)"


def check_rk4_order():
    # smooth nonlinear test ODE x' = -x + sin(x); reference via tiny steps
    def rhs(x, u, xi):
        return -x + np.sin(x)

    def integrate(dt, t_end=1.0):
        x = np.array(1.0)
        for _ in range(int(round(t_end / dt))):
            x = models.rk4_step(rhs, x, None, dt, lambda xx: None)
        return float(x)

    ref = integrate(1e-4)
    errs = [abs(integrate(dt) - ref) for dt in (0.04, 0.02, 0.01)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = all(8.0 <= r <= 32.0 for r in ratios)  # ideal 16, factor-2 band
    return "rk4_order4_scaling", ok, f"error ratios={ratios[0]:.2f},{ratios[1]:.2f} (ideal 16)"


def static_kalman_means(ys: np.ndarray, q: float, r: float, m0: float, p0: float) -> np.ndarray:
    """Exact Kalman posterior means for x_{k+1} = x_k + e, y = x + v (scalar)."""
    m, p = m0, p0
    out = np.empty(ys.size)
    for k, y in enumerate(ys):
        p = p + q
        gain = p / (p + r)
        m = m + gain * (y - m)
        p = (1.0 - gain) * p
        out[k] = m
    return out


def make_random_walk_model(q: float) -> particle_filter.AugmentedStateModel:
    """1-D random-walk state, direct observation; no learned function."""
    return particle_filter.AugmentedStateModel(
        dynamics=lambda X, u, xi: X,
        measurement=lambda X, u: X,
        conditioned_bases=(),
        Q=np.array([[q]]),
        c=1.0,
        n_y=1,
    )


def pf_vs_kalman_rmse(seed: int, steps: int = 500, num_particles: int = 500):
    """(pf_rmse, kalman_rmse) on one simulated random-walk dataset."""
    q, r = 1e-4, 1e-2
    rng = np.random.default_rng(seed)
    x = np.zeros(steps + 1)
    for k in range(steps):
        x[k + 1] = x[k] + np.sqrt(q) * rng.standard_normal()
    ys = x[1:] + np.sqrt(r) * rng.standard_normal(steps)

    model = make_random_walk_model(q)
    nu0 = 5.0
    ps = particle_filter.init_particles(
        model, np.zeros(1), np.eye(1), nu0, (nu0 - 1.0 + 1.0) * r * np.eye(1), num_particles, seed
    )
    pf_means = np.empty(steps)
    for k in range(steps):
        ps, rec = particle_filter.step(ps, model, None, np.array([ys[k]]), lambda_f=1.0)
        pf_means[k] = rec["x_hat"][0]
    kf_means = static_kalman_means(ys, q, r, 0.0, 1.0)
    truth = x[1:]
    return (
        float(np.sqrt(np.mean((pf_means - truth) ** 2))),
        float(np.sqrt(np.mean((kf_means - truth) ** 2))),
    )


def check_pf_sanity():
    pf_rmse, kf_rmse = pf_vs_kalman_rmse(seed=1, steps=300, num_particles=500)
    ok = pf_rmse <= 1.3 * kf_rmse
    return "pf_vs_kalman_sanity", ok, f"pf={pf_rmse:.4g} kalman={kf_rmse:.4g} (pf <= 1.3x)"


def _short_battery_run(seed: int, steps: int = 150, lambda_f: float = 1.0):
    cfg = default_battery_config()
    cfg.schedule.steps = steps
    cfg.schedule.switch_step = steps + 1
    cfg.filter.lambda_f = lambda_f
    artifacts = harness.offline_pipeline(cfg)
    return cfg, artifacts, harness.run_online_scenario(cfg, artifacts, run_seed=seed)


def check_filter_bookkeeping():
    """Weight normalization, SPD Lambda, exact nu recursion with lambda_f=1."""
    cfg = default_battery_config()
    steps = 100
    cfg.schedule.steps = steps
    cfg.schedule.switch_step = steps + 1
    artifacts = harness.offline_pipeline(cfg)
    model = harness.make_battery_filter_model(
        cfg.model.battery, cfg.schedule.dt, artifacts.basis, cfg.filter.c, cfg.filter.q_diag
    )
    traj = models.simulate(
        cfg.model.battery,
        np.asarray(cfg.schedule.x0),
        models.default_input_schedule,
        cfg.filter.q_diag * np.eye(3),
        cfg.filter.r_diag * np.eye(3),
        lambda k: 1.0,
        cfg.schedule.dt,
        steps,
        seed=3,
    )
    v0 = conditioning.project(artifacts.basis, artifacts.gp_models[0].w)
    mean = np.concatenate([np.asarray(cfg.schedule.x0), v0])
    cov = np.diag(np.concatenate([np.full(3, 1e-4), cfg.filter.c * artifacts.basis.singular_values]))
    ps = particle_filter.init_particles(model, mean, cov, 3.0, np.eye(3), 100, seed=3)
    issues = []
    for k in range(1, steps + 1):
        ps, rec = particle_filter.step(ps, model, traj.inputs[k - 1], traj.outputs[k], lambda_f=1.0)
        if abs(np.sum(ps.weights) - 1.0) > 1e-12:
            issues.append(f"weights sum off at step {k}")
        if not np.allclose(ps.nu, 3.0 + k):
            issues.append(f"nu recursion broken at step {k}")
        eig = np.linalg.eigvalsh(ps.lam).min()
        if eig <= 0.0:
            issues.append(f"Lambda not SPD at step {k}")
        if not 1.0 - 1e-9 <= rec["ess"] <= 100.0 + 1e-9:
            issues.append(f"ESS out of range at step {k}")
        if issues:
            break
    return "filter_bookkeeping", not issues, issues[0] if issues else "weights/nu/Lambda/ESS ok over 100 steps"


def check_determinism():
    _, _, rec_a = _short_battery_run(seed=11, steps=80)
    _, _, rec_b = _short_battery_run(seed=11, steps=80)
    same = all(
        a["x_hat_0"] == b["x_hat_0"] and a["func_error"] == b["func_error"]
        for a, b in zip(rec_a.steps, rec_b.steps)
    )
    return "determinism_fixed_seed", same, "bit-identical estimate trajectories"


def check_causality():
    cfg, artifacts, rec_full = _short_battery_run(seed=13, steps=120)
    cfg.schedule.steps = 60  # truncate the future
    rec_trunc = harness.run_online_scenario(cfg, artifacts, run_seed=13)
    same = all(
        a["x_hat_0"] == b["x_hat_0"] and a["func_error"] == b["func_error"]
        for a, b in zip(rec_full.steps[:60], rec_trunc.steps)
    )
    return "causality_truncation", same, "first 60 steps unchanged by deleting the future"


ALL_CHECKS = (
    check_basis_orthonormality,
    check_distance_equality,
    check_rk4_order,
    check_pf_sanity,
    check_filter_bookkeeping,
    check_determinism,
    check_causality,
)


def run_all(printer=print):
    """Run every check, print one PASS/FAIL line each; True if all pass."""
    all_ok = True
    for check in ALL_CHECKS:
        name, ok, detail = check()
        all_ok &= ok
        printer(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all_ok
