"""Checkpoints: a JSON manifest plus one blob of little-endian float32 tensors."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .cohort import LabelSpace
from .corpus import Vocab
from .encoder import EncoderConfig, EncoderParams
from .heads.baseline import MultiHeadConfig
from .heads.logreg import BowLogRegParams
from .heads.training import Classifier

FORMAT = "icdxml-checkpoint/1"
MANIFEST = "manifest.json"
BLOB = "tensors.bin"
_LE_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    manifest: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)


def atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> Path:
    path = Path(path)
    index, parts, offset = [], [], 0
    for name, arr in tensors.items():
        buf = np.ascontiguousarray(arr, dtype=_LE_F32).tobytes()
        index.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(buf)})
        parts.append(buf)
        offset += len(buf)
    manifest = {"format": FORMAT, "blob": BLOB, "tensors": index, **meta}
    atomic_write(path / BLOB, b"".join(parts))
    atomic_write(path / MANIFEST, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
    except FileNotFoundError as exc:
        raise CheckpointError(f"{path}: no checkpoint manifest") from exc
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format {manifest.get('format')!r}")
    blob = (path / manifest["blob"]).read_bytes()
    tensors = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        expected = int(np.prod(shape, dtype=np.int64)) * 4
        if entry["nbytes"] != expected or entry["offset"] + expected > len(blob):
            raise CheckpointError(f"{path}: tensor {entry['name']} does not match its blob slice")
        arr = np.frombuffer(blob, dtype=_LE_F32, count=expected // 4, offset=entry["offset"])
        tensors[entry["name"]] = arr.reshape(shape).astype(np.float32)
    return Checkpoint(manifest, tensors)


def _optimizer_tensors(state: nx.OptimizerState | None) -> tuple[dict, dict]:
    if state is None:
        return {}, {}
    tensors = {}
    for name in state.m:
        tensors["optimizer.m." + name] = state.m[name]
        tensors["optimizer.v." + name] = state.v[name]
    meta = {"step": state.step, "betas": list(state.betas), "eps": state.eps,
            "weight_decay": state.weight_decay}
    return tensors, meta


def _optimizer_from(ckpt: Checkpoint) -> nx.OptimizerState | None:
    meta = ckpt.manifest.get("optimizer")
    if not meta:
        return None
    state = nx.OptimizerState(tuple(meta["betas"]), meta["eps"], meta["weight_decay"], meta["step"])
    for key, arr in ckpt.tensors.items():
        if key.startswith("optimizer.m."):
            name = key[len("optimizer.m."):]
            state.m[name] = arr.copy()
            state.v[name] = ckpt.tensors["optimizer.v." + name].copy()
    return state


def save_encoder(
    path: str | Path,
    params: EncoderParams,
    vocab: Vocab,
    step: int = 0,
    dev_metric: float | None = None,
    extra: dict | None = None,
) -> Path:
    meta = {
        "kind": "encoder",
        "encoder_config": asdict(params.config),
        "vocab_hash": vocab.digest(),
        "step": step,
        "dev_metric": dev_metric,
        **(extra or {}),
    }
    return save_checkpoint(path, {k: v.data for k, v in params.items()}, meta)


def _check_vocab(ckpt: Checkpoint, vocab: Vocab | None, path) -> None:
    if vocab is not None and ckpt.manifest.get("vocab_hash") != vocab.digest():
        raise CheckpointError(f"{path}: vocab mismatch")


def load_encoder(path: str | Path, vocab: Vocab | None = None) -> EncoderParams:
    ckpt = load_checkpoint(path)
    _check_vocab(ckpt, vocab, path)
    if "encoder_config" not in ckpt.manifest:
        raise CheckpointError(f"{path}: checkpoint has no encoder")
    cfg = EncoderConfig.from_dict(ckpt.manifest["encoder_config"])
    prefix = "encoder." if ckpt.manifest.get("kind") == "classifier" else ""
    weights = {
        k[len(prefix):]: nx.parameter(v, k[len(prefix):])
        for k, v in ckpt.tensors.items()
        if k.startswith(prefix) and not k.startswith("optimizer.")
        and (prefix or not k.startswith(("xml.", "cls.", "mh.")))
    }
    return EncoderParams(cfg, weights)


def save_classifier(
    path: str | Path,
    model: Classifier,
    vocab: Vocab,
    space: LabelSpace,
    step: int = 0,
    dev_metric: float | None = None,
    optimizer: nx.OptimizerState | None = None,
    extra: dict | None = None,
) -> Path:
    tensors = {k: v.data for k, v in model.state().items()}
    opt_tensors, opt_meta = _optimizer_tensors(optimizer)
    tensors.update(opt_tensors)
    meta = {
        "kind": "classifier",
        "head": model.kind,
        "max_len": model.max_len,
        "vocab_hash": vocab.digest(),
        "label_space_hash": space.digest(),
        "label_space": space.to_json(),
        "step": step,
        "dev_metric": dev_metric,
        **(extra or {}),
    }
    if model.encoder is not None:
        meta["encoder_config"] = asdict(model.encoder.config)
    if model.multihead is not None:
        meta["multihead_config"] = asdict(model.multihead)
    if opt_meta:
        meta["optimizer"] = opt_meta
    return save_checkpoint(path, tensors, meta)


def load_classifier(
    path: str | Path,
    vocab: Vocab | None = None,
    space: LabelSpace | None = None,
) -> tuple[Classifier, LabelSpace, Checkpoint]:
    ckpt = load_checkpoint(path)
    man = ckpt.manifest
    if man.get("kind") != "classifier":
        raise CheckpointError(f"{path}: not a classifier checkpoint")
    _check_vocab(ckpt, vocab, path)
    if space is not None and man["label_space_hash"] != space.digest():
        raise CheckpointError("label space mismatch")
    stored_space = LabelSpace.from_json(man["label_space"])
    encoder = None
    if "encoder_config" in man:
        encoder = load_encoder(path)
    mh = MultiHeadConfig(**man["multihead_config"]) if "multihead_config" in man else None
    head = {
        k: nx.parameter(v, k)
        for k, v in ckpt.tensors.items()
        if not k.startswith(("encoder.", "optimizer."))
    }
    model = Classifier(man["head"], head, encoder, man["max_len"], mh)
    return model, stored_space, ckpt


def load_optimizer(ckpt: Checkpoint) -> nx.OptimizerState | None:
    return _optimizer_from(ckpt)


def save_logreg(
    path: str | Path,
    model: BowLogRegParams,
    vocab: Vocab,
    space: LabelSpace,
    dev_metric: float | None = None,
    extra: dict | None = None,
) -> Path:
    meta = {
        "kind": "logreg",
        "head": "logreg",
        "vocab_hash": vocab.digest(),
        "label_space_hash": space.digest(),
        "label_space": space.to_json(),
        "step": 0,
        "dev_metric": dev_metric,
        **(extra or {}),
    }
    return save_checkpoint(path, {"logreg.weight": model.weight, "logreg.bias": model.bias}, meta)


def load_logreg(
    path: str | Path, vocab: Vocab | None = None, space: LabelSpace | None = None
) -> tuple[BowLogRegParams, LabelSpace, Checkpoint]:
    ckpt = load_checkpoint(path)
    if ckpt.manifest.get("kind") != "logreg":
        raise CheckpointError(f"{path}: not a logistic-regression checkpoint")
    _check_vocab(ckpt, vocab, path)
    if space is not None and ckpt.manifest["label_space_hash"] != space.digest():
        raise CheckpointError("label space mismatch")
    model = BowLogRegParams(
        ckpt.tensors["logreg.weight"].astype(np.float64), ckpt.tensors["logreg.bias"].astype(np.float64)
    )
    return model, LabelSpace.from_json(ckpt.manifest["label_space"]), ckpt
