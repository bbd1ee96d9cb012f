"""Flat ``key=value`` run configuration."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .baselines import MlpConfig
from .model import VARIANTS, LcmrConfig
from .ndgrad import AdamConfig
from .train import TrainConfig

OUTPUT_DIR_ENV = "LCMR_OUTPUT_DIR"
MODELS = ("lcmr", "mlp", "itempop")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data_dir: str = ""
    split_path: str = ""  # default <data_dir>/split.txt
    output_dir: str = "runs/default"
    model: str = "lcmr"
    variant: str = "full"
    d: int = 200
    hops: int = 3
    memory_size: int = 100
    beta: float = 0.0  # 0 -> d ** -0.5
    max_words_per_item: int = 0  # 0 -> no cap
    init_sigma: float = 0.01
    mlp_widths: str = ""  # comma separated; empty -> d/2,d/4
    mlp_activation: str = "relu"
    epochs: int = 50
    batch_size: int = 128
    neg_ratio: int = 1
    lr: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_every: int = 1
    eval_k: int = 10
    save_epoch_checkpoints: bool = False
    history_timings: bool = True

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model: expected one of {MODELS}, got {self.model!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant: expected one of {VARIANTS}, got {self.variant!r}")
        for key in ("d", "hops", "memory_size", "epochs", "batch_size", "neg_ratio",
                    "eval_every", "eval_k"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be >= 1")
        if self.d < 2:
            raise ConfigError("d: joint dimension must be >= 2")

    @property
    def split_file(self) -> Path:
        return Path(self.split_path) if self.split_path else Path(self.data_dir) / "split.txt"

    def lcmr_config(self, vocab_size: int, variant: str | None = None) -> LcmrConfig:
        return LcmrConfig.from_joint_dim(
            self.d, hops=self.hops, memory_size=self.memory_size, vocab_size=vocab_size,
            beta=self.beta or None, variant=variant or self.variant,
            max_words_per_item=self.max_words_per_item or None, init_sigma=self.init_sigma)

    def mlp_config(self) -> MlpConfig:
        widths = tuple(int(x) for x in self.mlp_widths.split(",") if x.strip()) or None
        return MlpConfig(d1=self.d // 2, d2=self.d - self.d // 2, widths=widths,
                         activation=self.mlp_activation, init_sigma=self.init_sigma)

    def train_config(self) -> TrainConfig:
        adam = AdamConfig(self.lr, self.adam_beta1, self.adam_beta2, self.adam_eps)
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           neg_ratio=self.neg_ratio, adam=adam, seed=self.seed,
                           eval_every=self.eval_every, eval_k=self.eval_k)

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for f in fields(self):
                val = getattr(self, f.name)
                fh.write(f"{f.name}={str(val).lower() if isinstance(val, bool) else val}\n")


def _convert(key: str, typ, raw: str):
    try:
        if typ is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    types = {f.name: {"int": int, "float": float, "bool": bool, "str": str}[f.type]
             for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in types:
            raise ConfigError(f"{key}: unknown key ({source}:{lineno})")
        values[key] = _convert(key, types[key], raw)
    cfg = RunConfig(**values)
    override = os.environ.get(OUTPUT_DIR_ENV)
    if override:
        cfg = dataclasses.replace(cfg, output_dir=override)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), str(path))
