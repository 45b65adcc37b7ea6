"""Experiment configuration: JSON parsing and validation.

Every rejected value is reported with its dotted field path (``rule.b0``)
so a config can be fixed without reading code.
"""

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import LavregError
from .operators import (
    build_abel_operator,
    build_diagonal_operator,
    build_integration_operator,
    diagonal_spectrum,
)

__all__ = [
    "ConfigError",
    "OperatorSpec",
    "WitnessSpec",
    "NoiseSpec",
    "RuleSpec",
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "build_operator",
    "SEED_ENV",
]

SEED_ENV = "LAVREG_SEED"
OPERATOR_KINDS = ("integration", "abel", "diagonal")
SPECTRA = ("harmonic", "geometric", "clamped", "explicit")
RULES = ("balance", "md", "apriori")


class ConfigError(LavregError, ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_path, message):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path


def _section(raw, key, required=True):
    val = raw.get(key)
    if val is None:
        if required:
            raise ConfigError(key, "missing section")
        return {}
    if not isinstance(val, dict):
        raise ConfigError(key, "must be an object")
    return val


def _get(d, *names, default=None):
    for n in names:
        if n in d:
            return d[n]
    return default


def _int(val, path, lo=None):
    if isinstance(val, bool) or not isinstance(val, (int, np.integer)):
        raise ConfigError(path, f"must be an integer, got {val!r}")
    if lo is not None and val < lo:
        raise ConfigError(path, f"must be >= {lo}, got {val}")
    return int(val)


def _real(val, path):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(path, f"must be a number, got {val!r}")
    val = float(val)
    if not math.isfinite(val):
        raise ConfigError(path, "must be finite")
    return val


@dataclass(frozen=True)
class OperatorSpec:
    kind: str
    n: int
    alpha: float | None = None
    spectrum: str = "harmonic"
    floor: float | None = None
    zeros: int = 0
    values: tuple | None = None


@dataclass(frozen=True)
class WitnessSpec:
    p: float = 0.5
    seed: int = 0
    kind: str = "auto"
    scale: float = 1.0


@dataclass(frozen=True)
class NoiseSpec:
    delta_grid: tuple = ()
    seed: int = 0


@dataclass(frozen=True)
class RuleSpec:
    name: str = "balance"
    b0: float = 1.5
    b1: float = 2.0
    c: float | None = None
    p: float | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    operator: OperatorSpec
    witness: WitnessSpec
    noise: NoiseSpec
    rule: RuleSpec
    output_dir: str
    options: dict = field(default_factory=dict)

    def as_dict(self):
        d = asdict(self)
        d["noise"]["delta_grid"] = list(self.noise.delta_grid)
        if self.operator.values is not None:
            d["operator"]["values"] = list(self.operator.values)
        return d


def _operator(raw):
    sec = _section(raw, "operator")
    kind = sec.get("kind")
    if kind not in OPERATOR_KINDS:
        raise ConfigError("operator.kind", f"must be one of {OPERATOR_KINDS}, got {kind!r}")
    lam = _get(sec, "lambdas", "lambdas-spec", "lambdas_spec", default={})
    if isinstance(lam, list):
        lam = {"spectrum": "explicit", "values": lam}
    if not isinstance(lam, dict):
        raise ConfigError("operator.lambdas", "must be an object or a list")
    spectrum = lam.get("spectrum", "harmonic")
    values = None
    if kind == "diagonal" and spectrum == "explicit":
        vals = lam.get("values")
        if not isinstance(vals, list) or not vals:
            raise ConfigError("operator.lambdas.values", "must be a nonempty list")
        values = tuple(_real(v, "operator.lambdas.values") for v in vals)
        if any(v < 0 for v in values):
            raise ConfigError("operator.lambdas.values", "must be nonnegative")
        n = len(values)
    else:
        n = _int(sec.get("n"), "operator.n", lo=1 if kind == "diagonal" else 2)
    alpha = None
    if kind == "abel":
        alpha = _real(sec.get("alpha"), "operator.alpha")
        if not 0 < alpha < 1:
            raise ConfigError("operator.alpha", f"must lie in (0, 1), got {alpha}")
    if spectrum not in SPECTRA:
        raise ConfigError("operator.lambdas.spectrum",
                          f"must be one of {SPECTRA}, got {spectrum!r}")
    floor = lam.get("floor")
    if spectrum == "clamped":
        floor = _real(floor, "operator.lambdas.floor")
        if floor <= 0:
            raise ConfigError("operator.lambdas.floor", "must be positive")
    zeros = _int(lam.get("zeros", 0), "operator.lambdas.zeros", lo=0)
    return OperatorSpec(kind, n, alpha, spectrum, floor, zeros, values)


def _witness(raw, seed_override):
    sec = _section(raw, "witness", required=False)
    p = _real(sec.get("p", 0.5), "witness.p")
    if p <= 0:
        raise ConfigError("witness.p", f"must be positive, got {p}")
    seed = _int(sec.get("seed", 0), "witness.seed", lo=0)
    kind = sec.get("kind", "auto")
    if kind not in ("auto", "sphere", "scale-free"):
        raise ConfigError("witness.kind", f"unknown witness kind {kind!r}")
    scale = _real(sec.get("scale", 1.0), "witness.scale")
    if scale <= 0:
        raise ConfigError("witness.scale", "must be positive")
    if seed_override is not None:
        seed = seed_override
    return WitnessSpec(p, seed, kind, scale)


def _delta_grid(val):
    path = "noise.delta_grid"
    if isinstance(val, dict):
        lo = _real(val.get("min", 1e-7), path + ".min")
        hi = _real(val.get("max", 1e-2), path + ".max")
        per = _int(val.get("per_decade", 8), path + ".per_decade", lo=1)
        if not 0 < lo < hi:
            raise ConfigError(path, "need 0 < min < max")
        num = int(round(per * math.log10(hi / lo))) + 1
        return tuple(float(x) for x in np.geomspace(hi, lo, num))
    if not isinstance(val, list) or not val:
        raise ConfigError(path, "must be a nonempty list or a {min, max, per_decade} object")
    out = tuple(_real(v, path) for v in val)
    if any(v <= 0 for v in out):
        raise ConfigError(path, "deltas must be positive")
    return out


def _noise(raw, seed_override):
    sec = _section(raw, "noise", required=False)
    grid = _get(sec, "delta_grid", "delta-grid",
                default={"min": 1e-7, "max": 1e-2, "per_decade": 8})
    seed = _int(sec.get("seed", 0), "noise.seed", lo=0)
    if seed_override is not None:
        seed = seed_override
    return NoiseSpec(_delta_grid(grid), seed)


def _rule(raw, m_constant):
    sec = _section(raw, "rule", required=False)
    name = sec.get("name", "balance")
    if name not in RULES:
        raise ConfigError("rule.name", f"must be one of {RULES}, got {name!r}")
    b0 = _real(sec.get("b0", 1.5), "rule.b0")
    b1 = _real(sec.get("b1", 2.0), "rule.b1")
    if not b0 > m_constant:
        raise ConfigError("rule.b0", f"constraint b0 > M violated (b0={b0:g}, M={m_constant:g})")
    if not b1 >= b0:
        raise ConfigError("rule.b1", f"constraint b1 >= b0 violated (b1={b1:g}, b0={b0:g})")
    c = sec.get("c")
    if c is not None:
        c = _real(c, "rule.c")
        if c <= 0:
            raise ConfigError("rule.c", "must be positive")
    p = sec.get("p")
    if p is not None:
        p = _real(p, "rule.p")
        if not 0 < p <= 1:
            raise ConfigError("rule.p", f"must lie in (0, 1], got {p}")
    return RuleSpec(name, b0, b1, c, p)


def _env_seed():
    val = os.environ.get(SEED_ENV)
    if val is None or val == "":
        return None
    try:
        seed = int(val)
    except ValueError:
        raise ConfigError(SEED_ENV, f"must be a nonnegative integer, got {val!r}") from None
    if seed < 0:
        raise ConfigError(SEED_ENV, "must be nonnegative")
    return seed


def parse_config(raw, registry=None):
    """Validate a decoded JSON object and return an :class:`ExperimentConfig`.

    ``registry`` (a collection of experiment names) enables the check on
    ``experiment``. The environment variable ``LAVREG_SEED``, when set,
    replaces both ``witness.seed`` and ``noise.seed``.
    """
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    exp = raw.get("experiment")
    if not isinstance(exp, str):
        raise ConfigError("experiment", "missing or not a string")
    if registry is not None and exp not in registry:
        raise ConfigError("experiment", f"unknown experiment {exp!r}; "
                          f"expected one of {tuple(registry)}")
    seed = _env_seed()
    op = _operator(raw)
    # all builders certify M = 1
    rule = _rule(raw, 1.0)
    out = raw.get("output_dir", "lavreg_output")
    if not isinstance(out, str) or not out:
        raise ConfigError("output_dir", "must be a nonempty string")
    opts = raw.get("options", {})
    if not isinstance(opts, dict):
        raise ConfigError("options", "must be an object")
    return ExperimentConfig(exp, op, _witness(raw, seed), _noise(raw, seed), rule, out,
                            dict(opts))


def load_config(path, registry=None):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(raw, registry)


def build_operator(spec):
    """Instantiate the operator described by an :class:`OperatorSpec`."""
    if spec.kind == "integration":
        return build_integration_operator(spec.n)
    if spec.kind == "abel":
        return build_abel_operator(spec.n, spec.alpha)
    lam = diagonal_spectrum(spec.spectrum, spec.n, floor=spec.floor, zeros=spec.zeros,
                            values=spec.values)
    return build_diagonal_operator(lam)
