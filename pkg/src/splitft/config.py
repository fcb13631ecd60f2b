"""Experiment configuration: dataclasses plus a flat key = value file format.

Every key has a default, so an empty file is a valid minimal config.
Unknown keys and invalid values are all collected and reported together.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .model import ModelConfig
from .planner import DEFAULT_EPSILON, DEFAULT_RANK_SET, DEFAULT_TAU0, CostModel, RankSet


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("invalid config:\n  " + "\n  ".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class BudgetSpec:
    kind: str  # fixed | uniform | scripted
    value: float = 0.0  # fixed
    lo: float = 0.0  # uniform
    hi: float = 0.0
    table: dict[int, float] = field(default_factory=dict)  # scripted, round -> budget

    def validate(self) -> "BudgetSpec":
        if self.kind == "fixed":
            if self.value <= 0:
                raise ValueError(f"fixed budget must be positive, got {self.value}")
        elif self.kind == "uniform":
            if not 0 < self.lo <= self.hi:
                raise ValueError(f"uniform budget needs 0 < lo <= hi, got [{self.lo}, {self.hi}]")
        elif self.kind == "scripted":
            if not self.table or any(v <= 0 for v in self.table.values()):
                raise ValueError("scripted budget table must be nonempty with positive values")
        else:
            raise ValueError(f"unknown budget kind {self.kind!r}")
        return self


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = ModelConfig(n_blocks=2, d_model=32, n_heads=4, vocab_size=16, seq_len=16)
    n_clients: int = 3
    total_rounds: int = 50
    agg_period: int = 10
    batch: int = 2
    shard_size: int = 8
    rank_set: tuple[int, ...] = DEFAULT_RANK_SET
    kappa_opt: float = 3.0
    beta_act: float = 1.0
    learning_rate: float = 1.0
    seed: int = 0
    agg_mode: str = "weighted"  # naa flavor: sum | weighted
    aggregator: str = "naa"  # naa | haa
    client_budget: BudgetSpec = BudgetSpec("uniform", lo=1200.0, hi=6000.0)
    server_budget: BudgetSpec = BudgetSpec("fixed", value=8000.0)
    tau0: float = DEFAULT_TAU0
    epsilon: float = DEFAULT_EPSILON

    def validate(self) -> "ExperimentConfig":
        errs = []
        try:
            self.model.validate()
        except ValueError as e:
            errs.append(str(e))
        for name, val in (("n_clients", self.n_clients), ("total_rounds", self.total_rounds),
                          ("agg_period", self.agg_period), ("batch", self.batch),
                          ("shard_size", self.shard_size)):
            if val < 1:
                errs.append(f"{name} must be >= 1, got {val}")
        for name, val in (("learning_rate", self.learning_rate), ("kappa_opt", self.kappa_opt),
                          ("beta_act", self.beta_act), ("tau0", self.tau0), ("epsilon", self.epsilon)):
            if val <= 0:
                errs.append(f"{name} must be positive, got {val}")
        if self.agg_mode not in ("sum", "weighted"):
            errs.append(f"agg_mode must be sum|weighted, got {self.agg_mode!r}")
        if self.aggregator not in ("naa", "haa"):
            errs.append(f"aggregator must be naa|haa, got {self.aggregator!r}")
        try:
            RankSet(self.rank_set)
        except ValueError as e:
            errs.append(f"rank_set: {e}")
        for name, spec in (("client_budget", self.client_budget), ("server_budget", self.server_budget)):
            try:
                spec.validate()
            except ValueError as e:
                errs.append(f"{name}: {e}")
        if errs:
            raise ConfigError(errs)
        return self

    def cost_model(self) -> CostModel:
        return CostModel(
            d_model=self.model.d_model,
            n_blocks=self.model.n_blocks,
            batch=self.batch,
            seq_len=self.model.seq_len,
            kappa_opt=self.kappa_opt,
            beta_act=self.beta_act,
        )


_INT_KEYS = {
    "n_blocks", "d_model", "n_heads", "vocab_size", "seq_len",
    "n_clients", "total_rounds", "agg_period", "batch", "shard_size", "seed",
}
_FLOAT_KEYS = {"kappa_opt", "beta_act", "learning_rate", "tau0", "epsilon"}
_STR_KEYS = {"agg_mode", "aggregator"}
_SPECIAL_KEYS = {"rank_set", "client_budget", "server_budget"}
ALL_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _SPECIAL_KEYS


def _parse_budget(text: str) -> BudgetSpec:
    kind, _, rest = text.partition(":")
    kind = kind.strip()
    if kind == "fixed":
        return BudgetSpec("fixed", value=float(rest))
    if kind == "uniform":
        lo, hi = (float(p) for p in rest.split(","))
        return BudgetSpec("uniform", lo=lo, hi=hi)
    if kind == "scripted":
        table = {}
        for entry in rest.split(","):
            rnd, _, val = entry.partition("=")
            table[int(rnd)] = float(val)
        return BudgetSpec("scripted", table=table)
    raise ValueError(f"unknown budget kind {kind!r} (expected fixed|uniform|scripted)")


def parse_config_text(text: str) -> ExperimentConfig:
    errors: list[str] = []
    values: dict[str, object] = {}
    model_kw: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not eq:
            errors.append(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        if key not in ALL_KEYS:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in values or key in model_kw:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        try:
            if key in {"n_blocks", "d_model", "n_heads", "vocab_size", "seq_len"}:
                model_kw[key] = int(val)
            elif key in _INT_KEYS:
                values[key] = int(val)
            elif key in _FLOAT_KEYS:
                values[key] = float(val)
            elif key in _STR_KEYS:
                values[key] = val
            elif key == "rank_set":
                values[key] = tuple(int(r) for r in val.split(","))
            else:
                values[key] = _parse_budget(val)
        except ValueError as e:
            errors.append(f"{key}: {e}")
    cfg = ExperimentConfig()
    if model_kw:
        cfg = replace(cfg, model=replace(cfg.model, **model_kw))
    cfg = replace(cfg, **values)  # type: ignore[arg-type]
    try:
        cfg.validate()
    except ConfigError as e:
        errors.extend(e.errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def parse_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read())
