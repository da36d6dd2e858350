"""Experiment configuration and its ``key = value`` file format."""
from dataclasses import dataclass, field, fields, replace
import os

from .errors import ConfigError
from .masks import ClientConfig
from .nn import NetworkArch

AGGREGATIONS = ("simple", "bayes")
BASELINES = ("fedpm", "signsgd")
DISTILL_MODES = ("threshold", "sample")
PARTITIONS = ("iid", "noniid")
DATASETS = ("synthetic", "mnist")


@dataclass(frozen=True)
class ExperimentConfig:
    arch: tuple = (784, 200, 200, 10)
    num_clients: int = 10
    clients_per_round: int = 10
    rounds: int = 30
    aggregation: str = "simple"
    lambda0: float = 1.0
    # 0 = never reset, -1 = round(1 / rho)
    gamma: int = 1
    optimizer: str = "adam"
    learning_rate: float = 0.1
    local_epochs: int = 3
    batch_size: int = 128
    dataset: str = "synthetic"
    data_dir: str = ""
    data_seed: int = 0
    synthetic_train: int = 12000
    synthetic_test: int = 2000
    synthetic_separation: float = 10.0
    partition: str = "iid"
    c_max: int = 2
    baseline: str = "fedpm"
    server_lr: float = 0.002
    distill: str = "threshold"
    alpha_ths: float = 0.5
    score_init_std: float = 0.01
    dp_epsilon: float = 0.0
    dp_delta: float = 1e-4
    dp_clip: float = 0.0
    seed: int = 0
    plots: bool = True

    def __post_init__(self):
        arch = self.arch
        if isinstance(arch, str):
            arch = tuple(int(x) for x in arch.replace("-", ",").split(",") if x.strip())
        object.__setattr__(self, "arch", tuple(int(x) for x in arch))
        self.validate()

    def validate(self):
        if len(self.arch) < 2:
            raise ConfigError("arch needs at least input and output sizes")
        if not 1 <= self.clients_per_round <= self.num_clients:
            raise ConfigError("need 1 <= clients_per_round <= num_clients")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        for name, allowed in (("aggregation", AGGREGATIONS), ("baseline", BASELINES),
                              ("distill", DISTILL_MODES), ("partition", PARTITIONS),
                              ("dataset", DATASETS)):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if not 0 < self.alpha_ths < 1:
            raise ConfigError("alpha_ths must lie in (0, 1)")
        if self.gamma < -1:
            raise ConfigError("gamma must be >= 1, 0 (never) or -1 (auto)")
        if self.lambda0 <= 0:
            raise ConfigError("lambda0 must be > 0")
        if self.dp_epsilon < 0 or not 0 <= self.dp_clip < 0.5:
            raise ConfigError("dp_epsilon must be >= 0 and dp_clip in [0, 0.5)")
        if self.dp_enabled and not (0 < self.dp_delta < 1 and self.dp_clip > 0):
            raise ConfigError("differential privacy needs dp_delta in (0, 1) and dp_clip in (0, 0.5)")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must fit in 64 unsigned bits")
        self.client_config()

    @property
    def network(self):
        return NetworkArch.mlp(self.arch)

    @property
    def rho(self):
        return self.clients_per_round / self.num_clients

    @property
    def dp_enabled(self):
        return self.dp_epsilon > 0

    def client_config(self):
        try:
            return ClientConfig(self.learning_rate, self.local_epochs, self.batch_size, self.optimizer)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def with_overrides(self, **changes):
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes)

    def to_text(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "arch":
                value = ",".join(str(x) for x in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _coerce(name, kind, raw):
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "'\"":
        raw = raw[1:-1]
    if name == "arch":
        return raw
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if name == "gamma" and raw.lower() in ("never", "auto"):
        return 0 if raw.lower() == "never" else -1
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from None


_TYPES = {"int": int, "float": float, "str": str, "bool": bool, "tuple": tuple}


def parse_config(text):
    known = {f.name: _TYPES.get(f.type if isinstance(f.type, str) else f.type.__name__, str)
             for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, known[key], raw)
    return ExperimentConfig(**values)


def load_config(path):
    try:
        with open(os.fspath(path), encoding="utf-8") as f:
            return parse_config(f.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
