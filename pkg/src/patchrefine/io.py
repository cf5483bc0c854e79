"""On-disk formats: mask/logit images, raw float grids, corpus manifests, pseudo-label cache."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

from patchrefine.core import LOGIT_DTYPE
from patchrefine.pipeline.data import Sample

RAW_MAGIC = b"PRNRAW01"
MANIFEST_FORMAT = "patchrefine-corpus/1"
MANIFEST_NAME = "manifest.json"
PSEUDO_INDEX = "index.json"


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    """8-bit grayscale, foreground 255."""
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255, mode="L").save(path)


def read_mask(path: str | Path) -> np.ndarray:
    return (np.asarray(Image.open(path)) > 127).astype(np.uint8)


def write_logits_png(path: str | Path, logits: np.ndarray) -> None:
    """16-bit grayscale, pixel = round(score * 65535)."""
    values = np.round(np.clip(np.asarray(logits, dtype=np.float64), 0, 1) * 65535).astype(np.uint16)
    Image.fromarray(values).save(path)


def read_logits_png(path: str | Path) -> np.ndarray:
    return (np.asarray(Image.open(path), dtype=np.float64) / 65535).astype(LOGIT_DTYPE)


def write_heatmap(path: str | Path, grid: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> None:
    """8-bit grayscale rendering of ``grid`` linearly mapped from [lo, hi]."""
    scaled = (np.asarray(grid, dtype=np.float64) - lo) / (hi - lo)
    Image.fromarray(np.round(np.clip(scaled, 0, 1) * 255).astype(np.uint8), mode="L").save(path)


def write_raw(path: str | Path, grid: np.ndarray) -> None:
    """Lossless float32 row-major dump behind an 8-byte magic and uint32 (h, w)."""
    grid = np.ascontiguousarray(grid, dtype="<f4")
    if grid.ndim != 2:
        raise ValueError("raw grids are two-dimensional")
    with open(path, "wb") as f:
        f.write(RAW_MAGIC)
        f.write(struct.pack("<II", *grid.shape))
        f.write(grid.tobytes())


def read_raw(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != RAW_MAGIC:
        raise ValueError(f"{path}: not a raw logit grid")
    h, w = struct.unpack("<II", data[8:16])
    body = data[16:]
    if len(body) != 4 * h * w:
        raise ValueError(f"{path}: expected {h}x{w} floats, found {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(LOGIT_DTYPE)


def content_hash(sample: Sample) -> str:
    h = hashlib.sha256()
    for grid in (np.ascontiguousarray(sample.logit_map, dtype="<f4"), np.ascontiguousarray(sample.ground_truth, dtype=np.uint8)):
        h.update(str(grid.shape).encode())
        h.update(grid.tobytes())
    return h.hexdigest()


def write_corpus(out_dir: str | Path, splits: dict[str, list[Sample]], params: dict) -> Path:
    """Write every sample's logits (PNG + raw) and mask, plus a JSON manifest."""
    out = Path(out_dir)
    for sub in ("logits", "masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for role, samples in splits.items():
        for s in samples:
            paths = {
                "logits_png": f"logits/{s.sample_id}.png",
                "logits_raw": f"logits/{s.sample_id}.f32",
                "mask": f"masks/{s.sample_id}.png",
            }
            write_logits_png(out / paths["logits_png"], s.logit_map)
            write_raw(out / paths["logits_raw"], s.logit_map)
            write_mask(out / paths["mask"], s.ground_truth)
            entries.append({"sample_id": s.sample_id, "role": role, **paths, "generation": s.generation})
    manifest = {"format": MANIFEST_FORMAT, "parameters": params, "samples": entries}
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def read_manifest(corpus_dir: str | Path) -> dict:
    path = Path(corpus_dir) / MANIFEST_NAME
    manifest = json.loads(path.read_text())
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"{path}: unsupported manifest format {manifest.get('format')!r}")
    return manifest


def read_corpus(corpus_dir: str | Path, roles: Iterable[str] | None = None) -> dict[str, list[Sample]]:
    """Load samples grouped by role, from the lossless raw logits."""
    corpus = Path(corpus_dir)
    manifest = read_manifest(corpus)
    wanted = None if roles is None else set(roles)
    out: dict[str, list[Sample]] = {}
    for e in manifest["samples"]:
        if wanted is not None and e["role"] not in wanted:
            continue
        sample = Sample(
            e["sample_id"],
            read_raw(corpus / e["logits_raw"]),
            read_mask(corpus / e["mask"]),
            generation=e.get("generation", {}),
        )
        out.setdefault(e["role"], []).append(sample)
    return out


def pseudo_name(sample_id: str, patch_size: int) -> str:
    return f"{sample_id}.P{patch_size}.pseudo.png"


class PseudoLabelCache:
    """Directory of pseudo-label masks keyed by (sample content hash, P)."""

    def __init__(self, directory: str | Path):
        self.dir = Path(directory)
        self.index_path = self.dir / PSEUDO_INDEX
        self.index: dict[str, str] = {}
        if self.index_path.exists():
            self.index = json.loads(self.index_path.read_text())

    def lookup(self, sample: Sample, patch_size: int) -> np.ndarray | None:
        name = pseudo_name(sample.sample_id, patch_size)
        if self.index.get(name) != content_hash(sample) or not (self.dir / name).exists():
            return None
        return read_mask(self.dir / name)

    def store(self, sample: Sample, patch_size: int, mask: np.ndarray) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        name = pseudo_name(sample.sample_id, patch_size)
        write_mask(self.dir / name, mask)
        self.index[name] = content_hash(sample)

    def flush(self) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        self.index_path.write_text(json.dumps(self.index, indent=1, sort_keys=True))
