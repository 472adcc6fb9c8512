"""Experiment configuration and the flat ``key = value`` file format."""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .attacks import AttackConfig
from .errors import ConfigError

DEFENSES = ("fedavg", "krum", "trim_mean", "median", "fltrust", "kets", "kets_median_prefilter", "ketsv2")
DATASETS = ("synthetic", "idx", "csv")

# flat config key -> AttackConfig field
ATTACK_KEYS = {
    "attack": "kind",
    "perturbation": "perturbation",
    "start_round": "start_round",
    "stop_round": "stop_round",
    "gamma_init": "gamma_init",
    "tau": "tau",
    "trim_b": "b",
    "lambda_init": "lambda_init",
    "lambda_floor": "lambda_floor",
}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    dataset: str = "synthetic"
    n_samples: int = 2000
    n_features: int = 20
    n_classes: int = 5
    spread: float = 0.3
    train_images: str = None
    train_labels: str = None
    csv_path: str = None
    test_fraction: float = 0.2
    hidden: tuple = (256,)
    n_clients: int = 30
    clients_per_round: int = 30
    attacker_fraction: float = 0.2
    attack: AttackConfig = field(default_factory=AttackConfig)
    defense: str = "kets"
    alpha: float = 0.5
    beta: float = 0.1
    local_epochs: int = 3
    global_epochs: int = 20
    batch_size: int = 256
    lr: float = 0.08
    momentum: float = 0.6
    fltrust_root_size: int = 100
    ketsv2_threshold: float = 0.0
    ketsv2_mu: float = 0.1
    workers: int = 1

    def __post_init__(self):
        errors = self.validation_errors()
        if errors:
            key, msg = errors[0]
            raise ConfigError(msg, key=key)

    def validation_errors(self):
        errs = []

        def check(cond, key, msg):
            if not cond:
                errs.append((key, msg))

        check(self.dataset in DATASETS, "dataset", f"must be one of {DATASETS}")
        check(self.defense in DEFENSES, "defense", f"must be one of {DEFENSES}")
        check(0.0 <= self.attacker_fraction < 0.5, "attacker_fraction", "must lie in [0, 0.5)")
        check(self.n_clients >= 2, "n_clients", "must be at least 2")
        check(1 <= self.clients_per_round <= self.n_clients, "clients_per_round", "must lie in [1, n_clients]")
        check(self.alpha > 0, "alpha", "must be positive")
        check(self.beta > 0, "beta", "must be positive")
        check(self.local_epochs >= 0, "local_epochs", "must be nonnegative")
        check(self.global_epochs >= 0, "global_epochs", "must be nonnegative")
        check(self.batch_size >= 1, "batch_size", "must be positive")
        check(self.lr >= 0, "lr", "must be nonnegative")
        check(0.0 <= self.momentum < 1.0, "momentum", "must lie in [0, 1)")
        check(self.fltrust_root_size >= 1, "fltrust_root_size", "must be positive")
        check(0.0 < self.test_fraction < 1.0, "test_fraction", "must lie in (0, 1)")
        check(0.0 <= self.ketsv2_mu <= 1.0, "ketsv2_mu", "must lie in [0, 1]")
        check(self.workers >= 1, "workers", "must be positive")
        check(all(h >= 1 for h in self.hidden), "hidden", "layer sizes must be positive")
        if self.dataset == "synthetic":
            check(self.n_samples >= self.n_classes, "n_samples", "must be at least n_classes")
            check(self.n_features >= 1, "n_features", "must be positive")
            check(self.n_classes >= 2, "n_classes", "must be at least 2")
            check(self.spread > 0, "spread", "must be positive")
        if self.dataset == "idx":
            check(bool(self.train_images), "train_images", "required for dataset = idx")
            check(bool(self.train_labels), "train_labels", "required for dataset = idx")
        if self.dataset == "csv":
            check(bool(self.csv_path), "csv_path", "required for dataset = csv")
        return errs

    @property
    def n_attackers(self):
        return int(-(-self.attacker_fraction * self.n_clients // 1))

    def to_flat(self):
        """Resolved config as a flat ``{key: value}`` dict using the file's key names."""
        out = {}
        for f in dataclasses.fields(self):
            if f.name == "attack":
                for key, attr in ATTACK_KEYS.items():
                    out[key] = getattr(self.attack, attr)
            elif f.name == "hidden":
                out["hidden"] = list(self.hidden)
            else:
                out[f.name] = getattr(self, f.name)
        return out

    def replace(self, **changes):
        """Copy with flat-key overrides applied (attack keys included)."""
        return from_flat({**self.to_flat(), **changes})


def _field_types():
    types = {f.name: f.type for f in dataclasses.fields(ExperimentConfig) if f.name != "attack"}
    types["hidden"] = "hidden"
    for key, attr in ATTACK_KEYS.items():
        types[key] = {f.name: f.type for f in dataclasses.fields(AttackConfig)}[attr]
    return types


FIELD_TYPES = _field_types()


OPTIONAL_KEYS = {"stop_round", "train_images", "train_labels", "csv_path"}


def _coerce(key, raw, line=None):
    kind = FIELD_TYPES[key]
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if kind == "hidden":
            if isinstance(raw, (list, tuple)):
                return tuple(int(h) for h in raw)
            if raw in ("", "none"):
                return ()
            return tuple(int(h) for h in raw.split(","))
        if key in OPTIONAL_KEYS and (raw is None or (isinstance(raw, str) and raw.lower() in ("", "none"))):
            return None
        if kind is int:
            if isinstance(raw, bool) or (isinstance(raw, float) and not raw.is_integer()):
                raise ValueError
            return int(raw)
        if kind is float:
            if isinstance(raw, bool):
                raise ValueError
            return float(raw)
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot parse {raw!r} as {getattr(kind, '__name__', kind)}", key=key, line=line) from None


def from_flat(values, lines=None):
    """Build a config from flat keys; ``lines`` maps keys to file line numbers for errors."""
    lines = lines or {}
    base = {}
    attack = {}
    for key, raw in values.items():
        if key not in FIELD_TYPES:
            raise ConfigError("unknown key", key=key, line=lines.get(key))
        val = _coerce(key, raw, lines.get(key))
        if key in ATTACK_KEYS:
            attack[ATTACK_KEYS[key]] = val
        else:
            base[key] = val
    try:
        attack_cfg = AttackConfig(**attack)
    except ValueError as exc:
        attr = getattr(exc, "field", None)
        key = next((k for k, a in ATTACK_KEYS.items() if a == attr), None)
        raise ConfigError(str(exc), key=key, line=lines.get(key)) from None
    try:
        return ExperimentConfig(attack=attack_cfg, **base)
    except ConfigError as exc:
        if exc.key is not None and exc.key in lines:
            raise ConfigError(exc.args[0].split(": ", 1)[-1], key=exc.key, line=lines[exc.key]) from None
        raise


def parse_config_text(text, source="<config>"):
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: expected 'key = value'", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}: empty key", line=lineno)
        if key not in FIELD_TYPES:
            raise ConfigError("unknown key", key=key, line=lineno)
        if key in values:
            raise ConfigError("duplicate key", key=key, line=lineno)
        values[key] = value
        lines[key] = lineno
    return from_flat(values, lines)


def parse_config(path):
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))

