"""Flat ``section.key = value`` configuration files."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .collision import POTENTIALS
from .dispersion import CUSTOM_ELASTIC, FPU_CHAIN, NLS_QUADRATIC, OPTICAL_NN

EXPERIMENTS = ("DispersionReport", "KinematicsScan", "MicroscopicRun", "KineticRelaxation",
               "InhomogeneousTransport", "InvariantAudit", "MicroKineticCompare")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` holds the offending key path."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _pos_int(v):
    return int(v) > 0


def _pos(v):
    return float(v) > 0


def _nonneg(v):
    return float(v) >= 0


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


# key -> (parser, validator or None, message, default)
SCHEMA = {
    "experiment": (str, lambda v: v in EXPERIMENTS, f"must be one of {EXPERIMENTS}", None),
    "seed": (int, None, "", 0),
    "output_dir": (str, None, "", "out"),
    "dispersion.kind": (str, lambda v: v in (OPTICAL_NN, FPU_CHAIN, NLS_QUADRATIC,
                                             CUSTOM_ELASTIC), "unknown dispersion kind",
                        OPTICAL_NN),
    "dispersion.omega0": (float, _nonneg, "must be >= 0", 1.0),
    "dispersion.dim": (int, lambda v: v in (1, 3), "must be 1 or 3", 1),
    "dispersion.alpha": (str, None, "", None),
    "dispersion.cutoff": (float, _pos, "must be > 0", 1.0),
    "grid.N": (int, lambda v: v >= 4 and v % 2 == 0, "must be an even integer >= 4", 64),
    "collision.tol": (float, _pos, "must be > 0", 1e-12),
    "collision.rate_scale": (float, _pos, "must be > 0", 1.0),
    "collision.cache_dir": (str, None, "", None),
    "scan.samples": (int, _pos_int, "must be > 0", 1_000_000),
    "lattice.L": (int, lambda v: v >= 4, "must be >= 4", 64),
    "lattice.lambda": (float, _nonneg, "must be >= 0", 0.1),
    "lattice.potential": (str, lambda v: v in POTENTIALS, f"must be one of {POTENTIALS}",
                          "onsite_quartic"),
    "ensemble.beta": (float, _pos, "must be > 0", 1.0),
    "ensemble.M": (int, _pos_int, "must be > 0", 1000),
    "ensemble.seed": (int, None, "", 0),
    "integrator.dt": (float, _pos, "must be > 0", 0.01),
    "snapshots": (_floats, lambda v: len(v) > 0 and min(v) >= 0,
                  "must be a nonempty list of times >= 0", [0.0, 10.0]),
    "kinetic.T": (float, _pos, "must be > 0", 10.0),
    "kinetic.dt": (float, _pos, "must be > 0", 0.05),
    "kinetic.clamp": (_bool, None, "", False),
    "kinetic.record_every": (int, _pos_int, "must be > 0", 10),
    "space.R": (float, _pos, "must be > 0", 1.0),
    "space.Nr": (int, lambda v: v >= 2, "must be >= 2", 32),
    "initial.kind": (str, lambda v: v in ("equilibrium", "perturbed", "bump"),
                     "must be equilibrium, perturbed or bump", "equilibrium"),
    "initial.amplitude": (float, _nonneg, "must be >= 0", 0.5),
    "compare.lambdas": (_floats, lambda v: len(v) > 0 and min(v) >= 0,
                        "must be a nonempty list of values >= 0", [0.2, 0.1, 0.05]),
    "compare.t_kin": (float, _pos, "must be > 0", 1.0),
    "compare.calibration_lambda": (float, _pos, "must be > 0", None),
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)
    source: str | None = None

    def __getitem__(self, key):
        if key in self.values:
            return self.values[key]
        if key not in SCHEMA:
            raise KeyError(key)
        return SCHEMA[key][3]

    def get(self, key, default=None):
        v = self[key] if key in SCHEMA or key in self.values else None
        return default if v is None else v

    def section(self, name: str) -> dict:
        p = name + "."
        out = {k[len(p):]: SCHEMA[k][3] for k in SCHEMA if k.startswith(p)
               and SCHEMA[k][3] is not None}
        out.update({k[len(p):]: v for k, v in self.values.items() if k.startswith(p)})
        return out

    @property
    def experiment(self) -> str:
        return self["experiment"]


def parse_config_text(text: str, source: str | None = None) -> ExperimentConfig:
    """Parse and validate; errors carry the key path (or ``line N`` for syntax)."""
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}", f"expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
        if key in values:
            raise ConfigError(key, "duplicate key")
        parse, check, msg, _ = SCHEMA[key]
        try:
            v = parse(val)
        except ValueError as exc:
            raise ConfigError(key, f"cannot parse {val!r} ({exc})") from None
        if check is not None and not check(v):
            raise ConfigError(key, f"{msg} (got {val})")
        values[key] = v
    cfg = ExperimentConfig(values, source)
    if cfg["dispersion.kind"] == CUSTOM_ELASTIC and not cfg["dispersion.alpha"]:
        raise ConfigError("dispersion.alpha", "required for custom_elastic")
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {p}: {exc}") from None
    return parse_config_text(text, str(p))
