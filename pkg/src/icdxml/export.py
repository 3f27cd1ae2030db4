"""Attention exports: per-label token weights and encoder head maps as JSON and static HTML."""

from __future__ import annotations

import html
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .cohort import LabelSpace
from .corpus import SPECIAL_TOKENS, TokenizedNote, chunk_note
from .encoder import encoder_forward
from .heads.attention import xml_head_logits
from .heads.training import Classifier, content_mask


def chunk_tokens(note: TokenizedNote, chunk_index: int, width: int) -> list[str]:
    """Display strings for the unmasked positions of one chunk (OOV words keep their text)."""
    words = note.token_strings[chunk_index * width : (chunk_index + 1) * width]
    return [SPECIAL_TOKENS[2], *words, SPECIAL_TOKENS[3]]


def attention_export(
    model: Classifier,
    note: TokenizedNote,
    space: LabelSpace,
    target_labels: Sequence[str] | None = None,
) -> dict:
    """Label attention ``a_ij`` and last-layer head maps for every chunk of ``note``.

    Arrays cover only the unmasked positions of each chunk, so a label's
    weights sum to one and each head map is square in the token count.
    """
    if model.encoder is None:
        raise ValueError("attention export needs an encoder model")
    codes = list(target_labels) if target_labels else list(space.codes)
    for c in codes:
        if c not in space.index:
            raise KeyError(f"label {c!r} not in label space")
    rows = [space.index[c] for c in codes]
    width = model.max_len - 2
    chunks = []
    with nx.no_grad():
        for k, chunk in enumerate(chunk_note(note, model.max_len)):
            out = encoder_forward(model.encoder, chunk, capture_attention=True)
            n = int(chunk.mask.sum())
            entry = {
                "chunk": k,
                "tokens": chunk_tokens(note, k, width),
                "heads": [m[:n, :n].astype(float).tolist() for m in out.attentions[-1][0]],
            }
            if model.kind == "xml":
                cmask = content_mask(chunk.ids[None], chunk.mask[None])[0]
                logits, attn = xml_head_logits(out.hidden, cmask, model.head)
                probs = nx.sigmoid(logits).data
                entry["labels"] = {
                    code: {"score": float(probs[j]), "weights": attn[j, :n].astype(float).tolist()}
                    for code, j in zip(codes, rows)
                }
            chunks.append(entry)
    return {
        "note_id": note.note_id,
        "head": model.kind,
        "num_heads": model.encoder.config.num_heads,
        "labels": codes if model.kind == "xml" else [],
        "chunks": chunks,
    }


def _tint(weight: float, top: float) -> str:
    alpha = 0.0 if top <= 0 else min(1.0, weight / top)
    return f"rgba(220,40,40,{alpha:.3f})"


def _heat_svg(matrix: list[list[float]], cell: int = 6) -> str:
    m = np.asarray(matrix)
    n = m.shape[0]
    top = float(m.max()) if m.size else 1.0
    rects = []
    for i in range(n):
        for j in range(n):
            if m[i, j] > 0:
                rects.append(
                    f'<rect x="{j * cell}" y="{i * cell}" width="{cell}" height="{cell}" '
                    f'fill="{_tint(float(m[i, j]), top)}"/>'
                )
    size = n * cell
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}"><rect width="{size}" height="{size}" fill="white"/>'
        + "".join(rects) + "</svg>"
    )


def render_html(export: dict) -> str:
    """A standalone page: token highlights per label, then one heat map per encoder head."""
    parts = [
        "<!DOCTYPE html><html><head><meta charset='utf-8'>",
        f"<title>Attention for note {html.escape(export['note_id'])}</title>",
        "<style>body{font-family:sans-serif;margin:2em}.tok{padding:1px 2px;margin:1px;"
        "display:inline-block;border-radius:3px}.grid{display:flex;flex-wrap:wrap;gap:1em}"
        "figure{margin:0}</style></head><body>",
        f"<h1>Note {html.escape(export['note_id'])}</h1>",
    ]
    for chunk in export["chunks"]:
        parts.append(f"<h2>Chunk {chunk['chunk']}</h2>")
        for code, info in chunk.get("labels", {}).items():
            top = max(info["weights"]) if info["weights"] else 0.0
            spans = "".join(
                f"<span class='tok' title='{w:.4f}' style='background:{_tint(w, top)}'>{html.escape(t)}</span>"
                for t, w in zip(chunk["tokens"], info["weights"])
            )
            parts.append(f"<h3>{html.escape(code)} (p={info['score']:.3f})</h3><p>{spans}</p>")
        parts.append("<h3>Last-layer heads</h3><div class='grid'>")
        for h, matrix in enumerate(chunk["heads"]):
            parts.append(f"<figure>{_heat_svg(matrix)}<figcaption>head {h}</figcaption></figure>")
        parts.append("</div>")
    parts.append("</body></html>\n")
    return "\n".join(parts)


def write_attention_export(export: dict, out_dir: str | Path, stem: str | None = None) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or f"attention_{export['note_id']}"
    paths = {"json": out / f"{stem}.json", "html": out / f"{stem}.html"}
    paths["json"].write_text(json.dumps(export, indent=1) + "\n")
    paths["html"].write_text(render_html(export))
    return paths
