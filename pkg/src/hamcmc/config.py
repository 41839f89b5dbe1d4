"""Experiment configuration: a plain key = value text format with dotted sections.

One ``key = value`` per line; ``#`` starts a comment; blank lines are ignored.
Sections are dotted prefixes (``model.``, ``sampler.``, ``sweep.``, ``dist.``,
``output.``). Per-sampler numeric overrides use ``sampler.<name>.<field>``,
e.g. ``sampler.sgld.a_eps = 0.05``. Parsing validates every key, type, and
range and reports all violations at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .samplers import M_MAX, M_MIN, SAMPLER_NAMES

EXPERIMENT_KINDS = ("synthetic_2d", "posterior_mean_error", "bias_mse", "mf_distributed")
DISTRIBUTED_NAMES = ("dsgld", "dpsgld", "dhamcmc")


class ConfigError(ValueError):
    """Carries the full list of config violations, one message per problem."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass
class ModelParams:
    d: int = 2
    n: int = 1000
    sigma_x2: float = 10.0
    correlation: float = 0.9
    mf_rows: int = 40
    mf_cols: int = 40
    mf_true_rank: int = 3
    mf_rank: int = 3
    mf_noise_std: float = 0.1
    mf_density: float = 1.0
    sigma_w2: float = 1.0
    sigma_h2: float = 1.0
    movielens_path: str = ""


@dataclass
class SamplerParams:
    m: int = 3
    gamma: float = 1.0
    lam: float = 1.0
    n_omega: int = 10
    t: int = 20000
    burn_in: int = -1          # -1: experiment-specific default (half, or 50 for MF)
    a_eps: float = 1.0
    eps_const: float = 1e-3
    exponent: float = 0.51
    alpha: float = 0.99
    lambda_p: float = 1e-5
    mirror: bool = False
    schedule_kind: str = "polynomial"


@dataclass
class SweepParams:
    samplers: tuple = ()       # empty: experiment-specific default
    t_values: tuple = (1000, 5000, 20000)
    replicates: int = 1


@dataclass
class DistParams:
    p: int = 4
    rounds: int = 500
    test_fraction: float = 0.1
    rmse_every: int = 10
    keep_samples: bool = True


@dataclass
class OutputParams:
    figures: bool = True


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    model: ModelParams = field(default_factory=ModelParams)
    sampler: SamplerParams = field(default_factory=SamplerParams)
    sweep: SweepParams = field(default_factory=SweepParams)
    dist: DistParams = field(default_factory=DistParams)
    output: OutputParams = field(default_factory=OutputParams)
    overrides: dict = field(default_factory=dict)  # (sampler, field) -> value

    def sampler_value(self, sampler_name: str, field_name: str):
        """Field value with any per-sampler override applied."""
        if (sampler_name, field_name) in self.overrides:
            return self.overrides[(sampler_name, field_name)]
        return getattr(self.sampler, field_name)

    def echo_lines(self) -> list[str]:
        """Canonical key = value listing reproducing this config."""
        lines = [f"experiment = {self.experiment}", f"seed = {self.seed}"]
        for section_name in ("model", "sampler", "sweep", "dist", "output"):
            section = getattr(self, section_name)
            for f in fields(section):
                value = getattr(section, f.name)
                if isinstance(value, tuple):
                    value = ",".join(str(v) for v in value)
                elif isinstance(value, bool):
                    value = "true" if value else "false"
                lines.append(f"{section_name}.{f.name} = {value}")
        for (name, fname), value in sorted(self.overrides.items()):
            lines.append(f"sampler.{name}.{fname} = {value}")
        return lines


def _parse_bool(raw: str):
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_int(raw: str):
    return int(raw.strip())


def _parse_float(raw: str):
    return float(raw.strip())


def _parse_str(raw: str):
    return raw.strip()


def _parse_int_list(raw: str):
    return tuple(int(part.strip()) for part in raw.split(",") if part.strip())


def _parse_name_list(raw: str):
    return tuple(part.strip() for part in raw.split(",") if part.strip())


# key -> (parser, validator or None, message); validators take the parsed value.
_ALL_SAMPLERS = SAMPLER_NAMES + DISTRIBUTED_NAMES

_SCHEMA = {
    "experiment": (_parse_str, lambda v: v in EXPERIMENT_KINDS,
                   f"must be one of {', '.join(EXPERIMENT_KINDS)}"),
    "seed": (_parse_int, lambda v: v >= 0, "must be a nonnegative integer"),
    "model.d": (_parse_int, lambda v: v >= 1, "must be >= 1"),
    "model.n": (_parse_int, lambda v: v >= 0, "must be >= 0"),
    "model.sigma_x2": (_parse_float, lambda v: v > 0, "must be > 0"),
    "model.correlation": (_parse_float, lambda v: 0 <= v < 1, "must lie in [0, 1)"),
    "model.mf_rows": (_parse_int, lambda v: v >= 1, "must be >= 1"),
    "model.mf_cols": (_parse_int, lambda v: v >= 1, "must be >= 1"),
    "model.mf_true_rank": (_parse_int, lambda v: v >= 1, "must be >= 1"),
    "model.mf_rank": (_parse_int, lambda v: v >= 1, "must be >= 1"),
    "model.mf_noise_std": (_parse_float, lambda v: v >= 0, "must be >= 0"),
    "model.mf_density": (_parse_float, lambda v: 0 < v <= 1, "must lie in (0, 1]"),
    "model.sigma_w2": (_parse_float, lambda v: v > 0, "must be > 0"),
    "model.sigma_h2": (_parse_float, lambda v: v > 0, "must be > 0"),
    "model.movielens_path": (_parse_str, None, ""),
    "sampler.m": (_parse_int, lambda v: M_MIN <= v <= M_MAX,
                  f"M must be chosen at least {M_MIN} and at most {M_MAX}"),
    "sampler.gamma": (_parse_float, lambda v: v > 0, "must be > 0"),
    "sampler.lam": (_parse_float, lambda v: v >= 0, "must be >= 0"),
    "sampler.n_omega": (_parse_int, lambda v: v >= 1, "must be >= 1"),
    "sampler.t": (_parse_int, lambda v: v >= 0, "must be >= 0"),
    "sampler.burn_in": (_parse_int, lambda v: v >= -1, "must be >= 0 (or -1 for the default)"),
    "sampler.a_eps": (_parse_float, lambda v: v > 0, "must be > 0"),
    "sampler.eps_const": (_parse_float, lambda v: v > 0, "must be > 0"),
    "sampler.exponent": (_parse_float, lambda v: v > 0, "must be > 0"),
    "sampler.alpha": (_parse_float, lambda v: 0 <= v <= 1, "must lie in [0, 1]"),
    "sampler.lambda_p": (_parse_float, lambda v: v > 0, "must be > 0"),
    "sampler.mirror": (_parse_bool, None, ""),
    "sampler.schedule_kind": (_parse_str, lambda v: v in ("polynomial", "constant"),
                              "must be polynomial or constant"),
    "sweep.samplers": (_parse_name_list,
                       lambda v: all(s in _ALL_SAMPLERS for s in v),
                       f"sampler names must be among {', '.join(_ALL_SAMPLERS)}"),
    "sweep.t_values": (_parse_int_list, lambda v: len(v) > 0 and all(t >= 1 for t in v),
                       "must be a nonempty list of positive integers"),
    "sweep.replicates": (_parse_int, lambda v: v >= 1, "must be >= 1"),
    "dist.p": (_parse_int, lambda v: v >= 1, "must be >= 1"),
    "dist.rounds": (_parse_int, lambda v: v >= 0, "must be >= 0"),
    "dist.test_fraction": (_parse_float, lambda v: 0 < v < 1, "must lie in (0, 1)"),
    "dist.rmse_every": (_parse_int, lambda v: v >= 1, "must be >= 1"),
    "dist.keep_samples": (_parse_bool, None, ""),
    "output.figures": (_parse_bool, None, ""),
}

# sampler.<name>.<field> overrides are restricted to per-method tuning knobs.
_OVERRIDABLE = ("m", "gamma", "lam", "n_omega", "a_eps", "eps_const", "exponent",
                "alpha", "lambda_p", "schedule_kind")


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate the key = value format; raises ConfigError with all violations."""
    violations: list[str] = []
    seen: dict[str, object] = {}
    attempted: set[str] = set()
    overrides: dict = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            violations.append(f"line {lineno}: expected 'key = value', got {raw_line.strip()!r}")
            continue
        key, raw_value = (part.strip() for part in line.split("=", 1))
        if key in _SCHEMA:
            attempted.add(key)
            parser, validator, message = _SCHEMA[key]
            try:
                value = parser(raw_value)
            except ValueError:
                violations.append(f"{key}: cannot parse {raw_value!r}")
                continue
            if validator is not None and not validator(value):
                violations.append(f"{key}: {message} (got {raw_value.strip()})")
                continue
            if key in seen:
                violations.append(f"{key}: duplicate assignment at line {lineno}")
                continue
            seen[key] = value
            continue
        parts = key.split(".")
        if len(parts) == 3 and parts[0] == "sampler" and parts[1] in _ALL_SAMPLERS:
            name, fname = parts[1], parts[2]
            if fname not in _OVERRIDABLE:
                violations.append(f"{key}: {fname!r} is not an overridable sampler field")
                continue
            base_key = f"sampler.{fname}"
            parser, validator, message = _SCHEMA[base_key]
            try:
                value = parser(raw_value)
            except ValueError:
                violations.append(f"{key}: cannot parse {raw_value!r}")
                continue
            if validator is not None and not validator(value):
                violations.append(f"{key}: {message} (got {raw_value.strip()})")
                continue
            overrides[(name, fname)] = value
            continue
        violations.append(f"unknown key {key!r} at line {lineno}")

    for required in ("experiment", "seed"):
        if required not in attempted:
            violations.append(f"{required}: missing (mandatory)")

    if violations:
        raise ConfigError(violations)

    cfg = ExperimentConfig(
        experiment=seen["experiment"],
        seed=seen["seed"],
        overrides=overrides,
    )
    for key, value in seen.items():
        if key in ("experiment", "seed"):
            continue
        section_name, field_name = key.split(".", 1)
        setattr(getattr(cfg, section_name), field_name, value)

    _cross_validate(cfg, violations)
    if violations:
        raise ConfigError(violations)
    return cfg


def _cross_validate(cfg: ExperimentConfig, violations: list[str]) -> None:
    if cfg.sampler.burn_in > cfg.sampler.t:
        violations.append("sampler.burn_in: must not exceed sampler.t")
    serial = set(SAMPLER_NAMES)
    distributed = set(DISTRIBUTED_NAMES)
    chosen = set(cfg.sweep.samplers)
    if cfg.experiment == "mf_distributed":
        bad = chosen - distributed
        if bad:
            violations.append(
                f"sweep.samplers: {', '.join(sorted(bad))} not valid for mf_distributed "
                f"(use {', '.join(DISTRIBUTED_NAMES)})"
            )
    elif chosen - serial:
        bad = chosen - serial
        violations.append(
            f"sweep.samplers: {', '.join(sorted(bad))} not valid for {cfg.experiment} "
            f"(use {', '.join(SAMPLER_NAMES)})"
        )
    if cfg.experiment == "synthetic_2d" and cfg.model.d != 2:
        violations.append("model.d: synthetic_2d requires d = 2")
