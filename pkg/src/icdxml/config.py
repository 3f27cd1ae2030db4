"""Flat JSON run configuration with a schema check and an effective-defaults dump."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .encoder import PRESETS, EncoderConfig

HEADS = ("cls", "xml", "multihead", "logreg")

# inputs that must exist when the config is loaded; artifacts produced by
# earlier pipeline stages are checked by the command that consumes them
INPUT_PATHS = ("notes", "descriptions", "chronic", "comparison_vocab")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # paths
    notes: str | None = None
    descriptions: str | None = None
    chronic: str | None = None
    split: str | None = None
    vocab: str | None = None
    comparison_vocab: str | None = None
    out_dir: str = "runs"
    pretrain_checkpoint: str | None = None
    checkpoint: str | None = None
    # corpus
    vocab_size: int = 20000
    max_len: int = 128
    min_label_count: int = 1
    inclusive_min_count: bool = False
    excluded_categories: list[str] = field(default_factory=list)
    split_ratios: list[float] = field(default_factory=lambda: [0.7, 0.1, 0.2])
    # encoder: a preset name or inline fields
    encoder: str | dict = "desk"
    # head and fine-tuning
    head: str = "xml"
    semantic_init: bool = True
    lr: float = 2e-5
    epochs: int = 3
    batch_size: int = 32
    warmup: float = 0.1
    weight_decay: float = 0.01
    max_grad_norm: float = 1.0
    seed: int = 0
    # multi-head baseline
    mh_embed_dim: int = 300
    mh_gru_hidden: int = 512
    mh_num_heads: int = 200
    # logistic regression baseline
    logreg_lr: float = 4.0
    logreg_max_epochs: int = 200
    # pretraining
    pretrain_lr: float = 1e-4
    pretrain_epochs: int = 2
    pretrain_batch_size: int = 32
    pretrain_log_every: int = 20
    nsp: bool = True
    dev_fraction: float = 0.1
    # evaluation
    histogram_bin_width: float = 0.05
    high_auc_threshold: float = 0.98
    low_frequency_max_count: int | None = None

    def problems(self) -> list[str]:
        out = []
        if self.lr <= 0 or self.pretrain_lr <= 0 or self.logreg_lr <= 0:
            out.append("learning rates must be > 0")
        if self.epochs < 1 or self.pretrain_epochs < 1:
            out.append("epochs must be >= 1")
        if self.max_len < 8:
            out.append("max_len must be >= 8")
        if self.batch_size < 1 or self.pretrain_batch_size < 1:
            out.append("batch sizes must be >= 1")
        if self.min_label_count < 1:
            out.append("min_label_count must be >= 1")
        if self.vocab_size < 1:
            out.append("vocab_size must be >= 1")
        if not 0 <= self.warmup <= 1:
            out.append("warmup must be in [0, 1]")
        if not 0 < self.dev_fraction < 1:
            out.append("dev_fraction must be in (0, 1)")
        if self.head not in HEADS:
            out.append(f"head must be one of {HEADS}")
        if len(self.split_ratios) != 3 or any(r < 0 for r in self.split_ratios) or sum(self.split_ratios) <= 0:
            out.append("split_ratios must be three non-negative numbers with a positive sum")
        if isinstance(self.encoder, str) and self.encoder not in PRESETS:
            out.append(f"unknown encoder preset {self.encoder!r}; expected one of {sorted(PRESETS)}")
        return out

    def missing_inputs(self) -> list[str]:
        return [f"{n}: file not found: {getattr(self, n)}" for n in INPUT_PATHS
                if getattr(self, n) is not None and not Path(getattr(self, n)).exists()]

    def validate(self) -> "RunConfig":
        """Range checks raise :class:`ConfigError`; absent input files raise ``FileNotFoundError``."""
        problems = self.problems()
        if problems:
            raise ConfigError("invalid config: " + "; ".join(problems))
        missing = self.missing_inputs()
        if missing:
            raise FileNotFoundError("; ".join(missing))
        return self

    def encoder_config(self, vocab_size: int | None = None) -> EncoderConfig:
        """Resolve the encoder preset or inline dict; vocab size and max_len follow the run."""
        base = PRESETS[self.encoder] if isinstance(self.encoder, str) else EncoderConfig.from_dict(self.encoder)
        upd = asdict(base)
        upd["max_len"] = self.max_len
        if vocab_size is not None:
            upd["vocab_size"] = vocab_size
        cfg = EncoderConfig(**upd)
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def config_from_dict(obj: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**obj)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the JSON file, then explicit overrides; validated at the end."""
    obj: dict = {}
    if path is not None:
        try:
            obj = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigError("config file must hold a flat JSON object")
    obj.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_dict(obj).validate()
