"""Declarative experiment configuration (TOML with a versioned schema).

Every field has a default; the fully resolved configuration is embedded in
each report so a run is reproducible from its own output.  Validation
errors carry the dotted field path.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .models import (FAMILY_REGISTRY, BinaryProcess, CountProcess,
                     GaussianNoise, LocationProcess, QuasiModel,
                     StudentTNoise)
from .posterior import Prior

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1

PROCESS_KINDS = ("matched", "gaussian", "student_t", "contaminated", "negbin")


@dataclass
class ModelConfig:
    family: str = "gaussian_mean"
    p: int = 1
    n: int = 100
    sigma: float = 1.0
    design_seed: int = 7
    pool_size: int = 0          # 0 -> family default
    design_scale: float = 1.5
    box_half_width: float = 50.0


@dataclass
class TrueProcessConfig:
    kind: str = "matched"
    theta: list = field(default_factory=list)          # exact values, or
    theta_pattern: list = field(default_factory=lambda: [0.5, -0.5])
    scale: float = 1.0          # gaussian / student_t noise scale
    df: float = 3.0             # student_t degrees of freedom
    contamination: float = 0.1  # logistic twin
    overdispersion: float = 0.5  # poisson twin


@dataclass
class PriorConfig:
    kind: str = "flat"
    g_scale: float = 0.0        # gaussian prior precision G^2 = g_scale * I


@dataclass
class GeometryConfig:
    r0_normalization: float = 4.0
    x_n: float = 0.0            # <= 0 -> default (p)
    r0_override: float = 0.0    # <= 0 -> default rule
    rd_source: str = "fixed"    # fixed | conditions
    rd: float = 0.0
    b_fixed: float = 0.5        # identification strength when audit disabled


@dataclass
class ConditionsConfig:
    enabled: bool = False
    mc_budget: int = 2000
    n_directions: int = 0       # 0 -> plan default
    n_radii: int = 16
    polish_steps: int = 10


@dataclass
class PosteriorConfig:
    mode: str = "exact"         # exact | mcmc
    n_draws: int = 100_000
    burn_in: int = 0            # 0 -> default rule
    step_scale: float = 2.38
    dump_draws: bool = False


@dataclass
class MetricsConfig:
    n_lambda: int = 50
    probe_levels: list = field(default_factory=lambda: [0.25, 0.5, 0.75, 0.9])
    concentration_x: list = field(default_factory=lambda: [0.5])
    slack: float = 3.0


@dataclass
class BracketingConfig:
    n_directions: int = 0
    n_radii: int = 16
    polish_steps: int = 10
    upper_function_audit: bool = True


@dataclass
class CredibleConfig:
    kinds: list = field(default_factory=lambda: ["oracle"])
    alpha: float = 0.05


@dataclass
class CoverageConfig:
    enabled: bool = False
    kind: str = "oracle"
    alpha: float = 0.05
    n_reps: int = 2000


@dataclass
class SweepConfig:
    ratios: list = field(default_factory=lambda: [0.01, 0.1, 1.0, 10.0])
    g_values: list = field(default_factory=lambda: [0.001, 1.0, 5.0])
    reps: int = 20
    n_draws: int = 16_000
    mc_budget: int = 1000
    n_directions: int = 128
    n_radii: int = 8
    polish_steps: int = 5


@dataclass
class ExperimentConfig:
    scenario_id: str = "scenario"
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    true_process: TrueProcessConfig = field(default_factory=TrueProcessConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    conditions: ConditionsConfig = field(default_factory=ConditionsConfig)
    posterior: PosteriorConfig = field(default_factory=PosteriorConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    bracketing: BracketingConfig = field(default_factory=BracketingConfig)
    credible: CredibleConfig = field(default_factory=CredibleConfig)
    coverage: CoverageConfig = field(default_factory=CoverageConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def resolved(self) -> dict:
        out = asdict(self)
        out["schema_version"] = SCHEMA_VERSION
        return out


_SECTION_TYPES = {
    "model": ModelConfig,
    "true_process": TrueProcessConfig,
    "prior": PriorConfig,
    "geometry": GeometryConfig,
    "conditions": ConditionsConfig,
    "posterior": PosteriorConfig,
    "metrics": MetricsConfig,
    "bracketing": BracketingConfig,
    "credible": CredibleConfig,
    "coverage": CoverageConfig,
    "sweep": SweepConfig,
}


def _fill_section(cls, raw: dict, path: str):
    obj = cls()
    valid = set(obj.__dataclass_fields__)
    for key, value in raw.items():
        if key not in valid:
            raise ConfigError(f"{path}.{key}", "unknown field")
        default = getattr(obj, key)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{path}.{key}", "expected a boolean")
        elif isinstance(default, int) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{path}.{key}", "expected an integer")
            if isinstance(value, float) and not value.is_integer():
                raise ConfigError(f"{path}.{key}", "expected an integer")
            value = int(value)
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{path}.{key}", "expected a number")
            value = float(value)
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigError(f"{path}.{key}", "expected a string")
        elif isinstance(default, list):
            if not isinstance(value, list):
                raise ConfigError(f"{path}.{key}", "expected a list")
        setattr(obj, key, value)
    return obj


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    version = raw.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version}")
    cfg = ExperimentConfig()
    scenario = raw.pop("scenario", {})
    if not isinstance(scenario, dict):
        raise ConfigError("scenario", "expected a table")
    for key, value in scenario.items():
        if key == "id":
            cfg.scenario_id = str(value)
        elif key == "seed":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError("scenario.seed", "expected an integer")
            cfg.seed = int(value)
        else:
            raise ConfigError(f"scenario.{key}", "unknown field")
    for name, cls in _SECTION_TYPES.items():
        section = raw.pop(name, {})
        if not isinstance(section, dict):
            raise ConfigError(name, "expected a table")
        setattr(cfg, name, _fill_section(cls, section, name))
    for stray in raw:
        raise ConfigError(stray, "unknown section")
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(str(path), f"TOML parse error: {exc}") from exc
    return config_from_dict(raw)


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.model.family not in FAMILY_REGISTRY:
        raise ConfigError("model.family",
                          f"unknown family; choose from {sorted(FAMILY_REGISTRY)}")
    if cfg.model.p < 1:
        raise ConfigError("model.p", "must be >= 1")
    if cfg.model.n < 1:
        raise ConfigError("model.n", "must be >= 1")
    if cfg.true_process.kind not in PROCESS_KINDS:
        raise ConfigError("true_process.kind",
                          f"unknown kind; choose from {PROCESS_KINDS}")
    compatible = {
        "gaussian_mean": ("matched", "gaussian", "student_t"),
        "gaussian_linear": ("matched", "gaussian", "student_t"),
        "logistic": ("matched", "contaminated"),
        "poisson": ("matched", "negbin"),
    }
    if cfg.true_process.kind not in compatible[cfg.model.family]:
        raise ConfigError(
            "true_process.kind",
            f"{cfg.true_process.kind!r} is not valid for family "
            f"{cfg.model.family!r}")
    if cfg.prior.kind not in ("flat", "gaussian"):
        raise ConfigError("prior.kind", "must be 'flat' or 'gaussian'")
    if cfg.prior.kind == "gaussian" and cfg.prior.g_scale < 0:
        raise ConfigError("prior.g_scale", "must be nonnegative")
    if cfg.geometry.rd_source not in ("fixed", "conditions"):
        raise ConfigError("geometry.rd_source", "must be 'fixed' or 'conditions'")
    if not 0.0 <= cfg.geometry.rd < 1.0:
        raise ConfigError("geometry.rd", "must lie in [0, 1)")
    if cfg.geometry.rd_source == "conditions" and not cfg.conditions.enabled:
        raise ConfigError("geometry.rd_source",
                          "'conditions' requires conditions.enabled = true")
    if cfg.posterior.mode not in ("exact", "mcmc"):
        raise ConfigError("posterior.mode", "must be 'exact' or 'mcmc'")
    if cfg.posterior.mode == "mcmc" and cfg.posterior.n_draws < 1000:
        raise ConfigError("posterior.n_draws", "must be >= 1000 in mcmc mode")
    for kind in cfg.credible.kinds:
        if kind not in ("oracle", "posterior_moment", "plugin_fisher"):
            raise ConfigError("credible.kinds", f"unknown set kind {kind!r}")
    if not 0.0 < cfg.credible.alpha < 1.0:
        raise ConfigError("credible.alpha", "must lie in (0, 1)")
    if cfg.coverage.enabled:
        if cfg.coverage.kind not in ("oracle", "posterior_moment", "plugin_fisher"):
            raise ConfigError("coverage.kind", "unknown set kind")
        if cfg.coverage.n_reps < 100:
            raise ConfigError("coverage.n_reps", "must be >= 100")


# ---------------------------------------------------------------------------
# Scenario construction
# ---------------------------------------------------------------------------

def _true_theta(cfg: ExperimentConfig) -> np.ndarray:
    p = cfg.model.p
    if cfg.true_process.theta:
        theta = np.asarray(cfg.true_process.theta, dtype=float)
        if theta.shape != (p,):
            raise ConfigError("true_process.theta",
                              f"must have length p = {p}")
        return theta
    pattern = np.asarray(cfg.true_process.theta_pattern, dtype=float)
    if pattern.size == 0:
        raise ConfigError("true_process.theta_pattern", "must be nonempty")
    return np.resize(pattern, p)


def build_model(cfg: ExperimentConfig) -> QuasiModel:
    mc = cfg.model
    kwargs = dict(p=mc.p, n=mc.n, box_half_width=mc.box_half_width)
    if mc.family in ("gaussian_mean", "gaussian_linear"):
        kwargs["sigma"] = mc.sigma
        if mc.family == "gaussian_linear":
            kwargs["design_seed"] = mc.design_seed
        return FAMILY_REGISTRY[mc.family](**kwargs)
    kwargs["design_seed"] = mc.design_seed
    kwargs["design_scale"] = mc.design_scale
    if mc.pool_size > 0:
        kwargs["pool_size"] = mc.pool_size
    return FAMILY_REGISTRY[mc.family](**kwargs)


def build_process(cfg: ExperimentConfig):
    theta = _true_theta(cfg)
    kind = cfg.true_process.kind
    family = cfg.model.family
    if family in ("gaussian_mean", "gaussian_linear"):
        if kind == "matched":
            noise = GaussianNoise(cfg.model.sigma)
            return LocationProcess(theta=theta, noise=noise, matches_model=True)
        if kind == "gaussian":
            noise = GaussianNoise(cfg.true_process.scale)
            matched = abs(cfg.true_process.scale - cfg.model.sigma) < 1e-12
            return LocationProcess(theta=theta, noise=noise, matches_model=matched)
        if kind == "student_t":
            noise = StudentTNoise(cfg.true_process.df, cfg.true_process.scale)
            return LocationProcess(theta=theta, noise=noise, matches_model=False)
        raise ConfigError("true_process.kind",
                          f"{kind!r} is not valid for family {family!r}")
    if family == "logistic":
        if kind == "matched":
            return BinaryProcess(theta=theta, contamination=0.0, matches_model=True)
        if kind == "contaminated":
            return BinaryProcess(theta=theta,
                                 contamination=cfg.true_process.contamination,
                                 matches_model=cfg.true_process.contamination == 0.0)
        raise ConfigError("true_process.kind",
                          f"{kind!r} is not valid for family {family!r}")
    if family == "poisson":
        if kind == "matched":
            return CountProcess(theta=theta, overdispersion=0.0, matches_model=True)
        if kind == "negbin":
            return CountProcess(theta=theta,
                                overdispersion=cfg.true_process.overdispersion,
                                matches_model=cfg.true_process.overdispersion == 0.0)
        raise ConfigError("true_process.kind",
                          f"{kind!r} is not valid for family {family!r}")
    raise ConfigError("model.family", f"unhandled family {family!r}")


def build_prior(cfg: ExperimentConfig) -> Prior:
    if cfg.prior.kind == "flat" or cfg.prior.g_scale == 0.0:
        return Prior.flat()
    return Prior.gaussian(cfg.prior.g_scale * np.eye(cfg.model.p))


def build_scenario(cfg: ExperimentConfig):
    return build_model(cfg), build_process(cfg), build_prior(cfg)
