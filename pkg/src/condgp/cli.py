"""Command-line entry point exposing the pipeline as subcommands.

Exit codes: 0 success, 1 runtime failure, 2 configuration error,
3 validation failure. Progress goes to stderr; data goes to files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


from . import harness, models, validation
from .config import (
    ConfigError,
    ScenarioConfig,
    apply_override,
    config_to_dict,
    default_battery_config,
    default_sinc_config,
    load_config,
    save_config,
)

_CONFIG_HELP = """\
Config keys (JSON document, dotted paths for --override):
  model.family              target family: battery_alpha | sinc
  model.battery.*           physical constants: q_bat (A*s), c_c (J/K),
                            r_c (K/W), t_a (K), v0_offset/v0_slope (V),
                            beta_const (V/A/s), r0_const (Ohm)
  model.sinc_normalized     sinc convention (bool)
  offline.J / offline.K     realizations / samples per realization
  offline.sigma_xi          offline observation noise std
  offline.N / offline.M     original basis size / conditioned rank
  offline.energy_threshold  pick smallest M reaching this energy (0..1)
  offline.domain_lower/_upper  explicit 1-D domain (feature units)
  offline.padding           domain widening fraction of the data range
  offline.grid              uniform | random input locations
  offline.optimize_hyper    marginal-likelihood hyperparameter search (bool)
  offline.sigma2 / offline.lengthscale / offline.sigma_xi2_fit  SE kernel
  offline.seed              dataset seed
  filter.num_particles      particle count Np
  filter.c                  exploration scale on coefficient random walk
  filter.lambda_f           forgetting factor in (0, 1]
  filter.nu0 / filter.lambda0_diag  initial inverse-Wishart statistics
  filter.q_diag / filter.r_diag     process / measurement noise variances
  filter.prior_x_std        state prior std (centered at truth)
  filter.seed               filter seed offset
  filter.sigma_power        exponent p in the exploration covariance c*Sigma^p
  filter.ess_resample_fraction  resample when ESS < fraction*Np (null: always)
  filter.use_original_basis baseline with N degrees of freedom (bool)
  schedule.steps / schedule.dt (s)  run length and integration step
  schedule.switch_step      sudden change of the true function
  schedule.j_before / j_after / j_init  scheduling values
  schedule.x0               initial (z, V1 (V), Tc (K))
  schedule.input_amplitude / input_offset (A) / input_frequency (Hz)
                            charging-current sinusoid
  mc.runs / mc.base_seed    Monte-Carlo settings
  sweep.d_max / sweep.error_grid  DOF sweep settings
  output.dir / output.quiet
"""


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="condgp",
        description="Offline conditioning of a reduced-rank GP basis and "
        "noise-adaptive particle filtering for online inference and learning.",
        epilog=_CONFIG_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file (defaults embedded otherwise)")
        p.add_argument(
            "--preset",
            choices=["battery", "sinc"],
            default="battery",
            help="default config when --config is not given",
        )
        p.add_argument(
            "--override",
            nargs="*",
            default=[],
            metavar="KEY=VALUE",
            help="dotted-path config overrides, e.g. filter.num_particles=50",
        )
        p.add_argument("--seed", type=int, help="override all top-level seeds")
        p.add_argument("--output", help="output directory (overrides output.dir)")
        p.add_argument("--quiet", action="store_true", help="suppress progress lines")
        return p

    add("gen-data", "generate and store the offline dataset")
    add("fit", "fit per-realization coefficient vectors")
    add("condition", "run the offline conditioning pipeline; print the scree table")
    add("run", "single online inference-and-learning run")
    p_mc = add("mc", "Monte-Carlo study of the online scenario")
    p_mc.add_argument("--runs", type=int, help="override mc.runs")
    add("sweep", "DOF vs approximation-error sweep")
    add("validate", "run the built-in invariant suite")
    return parser


def _resolve_config(args) -> ScenarioConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = default_sinc_config() if args.preset == "sinc" else default_battery_config()
    for item in args.override:
        if "=" not in item:
            raise ConfigError(f"override '{item}' must have the form key=value")
        key, value = item.split("=", 1)
        apply_override(cfg, key, value)
    if getattr(args, "runs", None) is not None:
        cfg.mc.runs = args.runs
    if args.seed is not None:
        cfg.offline.seed = args.seed
        cfg.filter.seed = args.seed
        cfg.mc.base_seed = args.seed
    if args.output:
        cfg.output.dir = args.output
    if args.quiet:
        cfg.output.quiet = True
    return cfg


def _echo_config(cfg: ScenarioConfig) -> str:
    out_dir = cfg.output.dir
    os.makedirs(out_dir, exist_ok=True)
    save_config(cfg, os.path.join(out_dir, "config.json"))
    return out_dir


def _progress(cfg: ScenarioConfig, message: str) -> None:
    if not cfg.output.quiet:
        print(message, file=sys.stderr, flush=True)


def _cmd_gen_data(cfg: ScenarioConfig) -> int:
    out_dir = _echo_config(cfg)
    lo, hi = harness._data_range(cfg.model.family)
    datasets = models.generate_offline_dataset(
        cfg.model.family, cfg.offline.J, cfg.offline.K, cfg.offline.sigma_xi, (lo, hi), cfg.offline.seed,
        grid=cfg.offline.grid,
    )
    rows = []
    for j, (x, xi) in enumerate(datasets, start=1):
        rows.extend((j, float(xk[0]), float(v)) for xk, v in zip(x, xi))
    harness.write_csv(os.path.join(out_dir, "offline_dataset.csv"), ["j", "x", "xi"], rows)
    with open(os.path.join(out_dir, "dataset_manifest.json"), "w") as fh:
        json.dump(
            {
                "family": cfg.model.family,
                "J": cfg.offline.J,
                "K": cfg.offline.K,
                "sigma_xi": cfg.offline.sigma_xi,
                "input_range": [lo, hi],
                "grid": cfg.offline.grid,
                "seed": cfg.offline.seed,
            },
            fh,
            indent=1,
        )
    _progress(cfg, f"wrote offline dataset to {out_dir}")
    return 0


def _cmd_fit(cfg: ScenarioConfig) -> int:
    out_dir = _echo_config(cfg)
    artifacts = harness.offline_pipeline(cfg, out_dir=out_dir)
    _progress(cfg, f"fitted {len(artifacts.gp_models)} coefficient vectors (N={cfg.offline.N})")
    return 0


def _cmd_condition(cfg: ScenarioConfig) -> int:
    out_dir = _echo_config(cfg)
    artifacts = harness.offline_pipeline(cfg, out_dir=out_dir)
    print("m,sigma_m,cumulative_energy")
    for m, sigma, cum in artifacts.scree:
        print(f"{m},{harness._fmt(sigma)},{harness._fmt(cum)}")
    _progress(cfg, f"conditioned M={artifacts.basis.M}, explained energy {artifacts.basis.explained_energy:.6f}")
    return 0


def _cmd_run(cfg: ScenarioConfig) -> int:
    out_dir = _echo_config(cfg)
    artifacts = harness.offline_pipeline(cfg, out_dir=os.path.join(out_dir, "offline"))
    record = harness.run_online_scenario(cfg, artifacts, cfg.mc.base_seed, out_dir=out_dir)
    if record.failed:
        _progress(cfg, f"run failed: filter divergence at step {record.failure_step}")
        return 1
    _progress(cfg, f"run complete: final func_error {record.steps[-1]['func_error']:.4g}")
    return 0


def _cmd_mc(cfg: ScenarioConfig) -> int:
    out_dir = _echo_config(cfg)
    summary = harness.monte_carlo_study(cfg, cfg.mc.runs, cfg.mc.base_seed, out_dir=out_dir)
    _progress(
        cfg,
        f"{cfg.mc.runs} runs, failure rate {summary.failure_rate:.1%}, "
        f"final mean func_error {summary.mean['func_error'][-1]:.4g}",
    )
    return 0


def _cmd_sweep(cfg: ScenarioConfig) -> int:
    out_dir = _echo_config(cfg)
    rows, _ = harness.dof_error_sweep(cfg, out_dir=out_dir)
    for d, mean_o, mean_c, *_rest in rows:
        _progress(cfg, f"dof={d}: original {mean_o:.4g}, conditioned {mean_c:.4g}")
    return 0


def _cmd_validate(cfg: ScenarioConfig) -> int:
    ok = validation.run_all()
    return 0 if ok else 3


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "fit": _cmd_fit,
    "condition": _cmd_condition,
    "run": _cmd_run,
    "mc": _cmd_mc,
    "sweep": _cmd_sweep,
    "validate": _cmd_validate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](cfg)
    except (ConfigError, TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
