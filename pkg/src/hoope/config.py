"""Experiment configuration: presets, ``key = value`` config files."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from hoope.enkf import InflationConfig, LocalizationConfig

VARIANTS = ("nohoope", "pso", "rtc")

# Scale-dependent settings; "desk" divides every paper length by ten,
# including the bootstrap window (500 MTU windows would nearly cover the
# whole 720 MTU desk record and collapse the index variance).
PRESETS = {
    "paper": dict(run_length_mtu=7200.0, spinup_mtu=2500.0, offline_run_mtu=28800.0,
                  index_window_mtu=2000.0, obs_subset_mtu=500.0),
    "desk": dict(run_length_mtu=720.0, spinup_mtu=250.0, offline_run_mtu=2880.0,
                 index_window_mtu=200.0, obs_subset_mtu=50.0),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    variant: str = "nohoope"
    ensemble_size: int = 20
    run_length_mtu: float = 720.0
    spinup_mtu: float = 250.0
    nature_spinup_mtu: float = 10.0
    obs_grids: tuple[int, ...] = (0, 1, 4, 5)
    obs_noise_std: float = 0.1
    inflation_mode: str = "adaptive"
    rho_x: float = 1.05
    rho_theta: float = 1.05
    adaptive_prior_var: float = 0.04
    adaptive_initial: float = 1.05
    loc_sigma: float = 3.0
    # offline calibration
    offline_members: int = 100
    offline_lower: float = 0.0
    offline_upper: float = 30.0
    offline_run_mtu: float = 2880.0
    index_window_mtu: float = 200.0
    obs_bootstrap: int = 1000
    obs_subset_mtu: float = 500.0
    mcmc_total: int = 500_000
    mcmc_burnin: int = 100_000
    mcmc_proposal_std: float = 0.0  # 0 selects 5% of the prior range
    # seeds
    seed_nature: int = 1
    seed_obs: int = 2
    seed_init: int = 3
    seed_mcmc: int = 4
    # paths
    prior_path: str = ""
    obs_path: str = ""
    nature_path: str = ""
    output_dir: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.ensemble_size < 2:
            raise ConfigError("ensemble_size must be at least 2")
        if not 0 <= self.spinup_mtu < self.run_length_mtu:
            raise ConfigError("need 0 <= spinup_mtu < run_length_mtu")
        if self.inflation_mode not in ("fixed", "adaptive"):
            raise ConfigError("inflation_mode must be 'fixed' or 'adaptive'")
        if self.rho_x < 1 or self.rho_theta < 1:
            raise ConfigError("inflation factors must be >= 1")
        if self.index_window_mtu > self.offline_run_mtu:
            raise ConfigError("index window longer than the offline runs")
        if not self.loc_sigma > 0 or not self.obs_noise_std > 0:
            raise ConfigError("loc_sigma and obs_noise_std must be positive")
        if not self.offline_lower < self.offline_upper or self.offline_members < 2:
            raise ConfigError("offline grid needs lower < upper and at least 2 members")
        if not 0 <= self.mcmc_burnin < self.mcmc_total:
            raise ConfigError("need 0 <= mcmc_burnin < mcmc_total")
        if self.mcmc_proposal_std < 0:
            raise ConfigError("mcmc_proposal_std must be >= 0")

    @classmethod
    def preset(cls, name: str, **overrides) -> "ExperimentConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}")
        return cls(**{**PRESETS[name], **overrides})

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def inflation(self) -> InflationConfig:
        return InflationConfig(self.inflation_mode, self.rho_x, self.rho_theta,
                               self.adaptive_prior_var, self.adaptive_initial)

    def localization(self) -> LocalizationConfig:
        return LocalizationConfig(self.loc_sigma)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(i) for i in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(name: str, raw: str):
    kinds = {f.name: f.type for f in fields(ExperimentConfig)}
    if name not in kinds:
        raise ConfigError(f"unknown config key {name!r}")
    kind = kinds[name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind.startswith("tuple"):
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw


def parse_overrides(pairs: dict[str, str]) -> dict:
    return {k: _coerce(k, v) for k, v in pairs.items()}


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Read a flat ``key = value`` file (``#`` comments) on top of ``base``."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + Path(path).read_text())
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    raw = dict(parser["run"])
    preset = raw.pop("preset", None)
    values = parse_overrides(raw)
    if preset is not None:
        base = ExperimentConfig.preset(preset)
    base = base or ExperimentConfig()
    try:
        return base.replace(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
