"""Command-line entry point: ``hoope <subcommand> [options]``.

Every ExperimentConfig field has a matching ``--field-name`` flag. Settings
are layered: preset, then ``--config`` file, then explicit flags. Files are
read from and written to ``--output-dir`` unless explicit paths are given.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from hoope import experiment as E
from hoope.batchopt import ClimatologyPrior
from hoope.config import PRESETS, VARIANTS, ConfigError, ExperimentConfig, load_config, parse_overrides
from hoope.synth import NatureRun, observations_from_csv, observations_to_csv

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("hoope")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="run-length scale (default desk)")
    p.add_argument("-v", "--verbose", action="store_true")
    group = p.add_argument_group("experiment settings")
    for f in fields(ExperimentConfig):
        group.add_argument(_flag(f.name), dest=f.name, metavar=f.type.upper().split("[")[0],
                           help=f"default {getattr(ExperimentConfig, f.name, None)!r}"
                           if not f.name.endswith("grids") else "comma-separated grid indices")


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.preset(args.preset or "desk")
    if args.config:
        cfg = load_config(args.config, cfg)
        if args.preset:
            cfg = cfg.replace(**PRESETS[args.preset])
    raw = {f.name: getattr(args, f.name) for f in fields(ExperimentConfig)
           if getattr(args, f.name, None) is not None}
    try:
        return cfg.replace(**parse_overrides(raw))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def parse_grid(text: str) -> np.ndarray:
    """``a,b,c`` lists or ``start:stop:n`` evenly spaced (inclusive)."""
    try:
        if ":" in text:
            lo, hi, n = text.split(":")
            return np.linspace(float(lo), float(hi), int(n))
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError as exc:
        raise ConfigError(f"bad grid {text!r}") from exc


# ---------------------------------------------------------------- inputs

def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _nature(cfg: ExperimentConfig) -> NatureRun:
    path = cfg.nature_path or _out(cfg) / "nature.csv"
    if Path(path).exists():
        return NatureRun.from_csv(path)
    if cfg.nature_path:
        raise ConfigError(f"nature file {path} not found")
    log.info("no nature run on disk, generating one")
    return E.nature_and_observations(cfg.replace(obs_path=""))[0]


def _observations(cfg: ExperimentConfig, nature: NatureRun | None = None):
    path = cfg.obs_path or _out(cfg) / "obs.csv"
    if Path(path).exists():
        return observations_from_csv(path)
    if cfg.obs_path:
        raise ConfigError(f"observation file {path} not found")
    from hoope.synth import generate_observations
    nature = nature or _nature(cfg)
    return generate_observations(nature, cfg.obs_grids, cfg.obs_noise_std, cfg.seed_obs)


def _prior(cfg: ExperimentConfig) -> ClimatologyPrior | None:
    path = cfg.prior_path or _out(cfg) / "prior.txt"
    if Path(path).exists():
        return ClimatologyPrior.load(path)
    if cfg.prior_path or cfg.variant != "nohoope":
        raise ConfigError(f"climatology prior {path} not found; run 'offline' first")
    return None


# ---------------------------------------------------------------- commands

def cmd_nature(cfg, args) -> int:
    nature, _ = E.nature_and_observations(cfg.replace(nature_path="", obs_path=""))
    path = _out(cfg) / "nature.csv"
    nature.to_csv(path)
    print(f"wrote {path} ({len(nature.times)} records)")
    return EXIT_OK


def cmd_obsgen(cfg, args) -> int:
    from hoope.synth import generate_observations
    nature = _nature(cfg)
    obs = generate_observations(nature, cfg.obs_grids, cfg.obs_noise_std, cfg.seed_obs)
    path = _out(cfg) / "obs.csv"
    observations_to_csv(obs, path)
    print(f"wrote {path} ({len(obs)} analysis times)")
    return EXIT_OK


def cmd_offline(cfg, args) -> int:
    obs = _observations(cfg)
    result = E.run_offline(cfg, obs)
    E.write_offline(result, _out(cfg))
    print(f"climatology prior: mean {result.prior.theta_c[0]:.4f} "
          f"variance {result.prior.c_diag[0]:.4f} (acceptance {result.chain.acceptance_rate:.2f})")
    return EXIT_OK


def cmd_assimilate(cfg, args) -> int:
    nature = _nature(cfg)
    obs = _observations(cfg, nature)
    result = E.run_assimilation(cfg, _prior(cfg), nature, obs)
    result.write(_out(cfg), cfg.variant)
    m = result.metrics
    if m.diverged:
        print(f"{cfg.variant}: diverged after {m.cycles_run} cycles")
        return EXIT_DIVERGED
    print(f"{cfg.variant}: rmse_state {m.rmse_state:.4f} r_state {m.r_state:.4f} "
          f"rmse_param {m.rmse_param:.4f} r_param {m.r_param:.4f}")
    return EXIT_OK


def cmd_sweep(cfg, args) -> int:
    nature = _nature(cfg)
    obs = _observations(cfg, nature)
    rows = E.sweep(cfg, parse_grid(args.rho_x_grid), parse_grid(args.rho_theta_grid),
                   _prior(cfg), nature, obs)
    path = _out(cfg) / f"sweep_{cfg.variant}.csv"
    E.write_metrics_table(path, rows)
    n_div = sum(m.diverged for _, _, m in rows)
    print(f"wrote {path} ({len(rows)} cells, {n_div} diverged)")
    return EXIT_OK


def cmd_report(cfg, args) -> int:
    out = _out(cfg)
    present = [v for v in VARIANTS if (out / f"param_timeseries_{v}.csv").exists()]
    if not present:
        raise ConfigError(f"no param_timeseries_*.csv in {out}; run 'assimilate' first")
    series = {}
    truth = {}
    for v in present:
        with open(out / f"param_timeseries_{v}.csv", newline="") as fh:
            for rec in csv.DictReader(fh):
                key = (float(rec["time_mtu"]), int(rec["grid"]))
                series.setdefault(key, {})[v] = rec["mean"]
                truth[key] = rec["truth"]
    with open(out / "param_hovmoller.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_mtu", "grid", "truth", *VARIANTS])
        for key in sorted(series):
            w.writerow([repr(key[0]), key[1], truth[key], *(series[key].get(v, "") for v in VARIANTS)])
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", *E.SWEEP_COLUMNS])
        for v in VARIANTS:
            path = out / f"metrics_{v}.csv"
            if path.exists():
                with open(path, newline="") as src:
                    for row in list(csv.reader(src))[1:]:
                        w.writerow([v, *row])
    print(f"wrote {out / 'param_hovmoller.csv'} and {out / 'metrics.csv'} ({', '.join(present)})")
    return EXIT_OK


COMMANDS = {
    "nature": (cmd_nature, "generate the two-scale nature run"),
    "obsgen": (cmd_obsgen, "draw noisy observations from the nature run"),
    "offline": (cmd_offline, "offline calibration: ensemble runs, surrogate, MCMC, prior"),
    "assimilate": (cmd_assimilate, "cycled assimilation for one variant"),
    "sweep": (cmd_sweep, "fixed-inflation grid of assimilation runs"),
    "report": (cmd_report, "merge per-variant outputs into summary CSVs"),
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hoope", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        if name == "sweep":
            p.add_argument("--rho-x-grid", default="1.05:2.55:31", help="list a,b,.. or start:stop:n")
            p.add_argument("--rho-theta-grid", default="1.05:7.05:31")
        _add_config_flags(p)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        return COMMANDS[args.command][0](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except E.StageError as exc:
        print(f"offline stage failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
