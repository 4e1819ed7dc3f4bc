"""Writers for the TRNB1 bag container and the bagset/1 dataset manifest.

Byte layout per bag file: magic `TRNB1`, little-endian u32 quad
(k, d, num_genes, label), k*d float32 feature rows in cluster-sorted order,
num_genes float32 gene targets, then a JSON trailer naming slide and case.
The manifest is JSON: format tag, bag geometry, class names, and per-slide
label/split plus relative bag paths.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

MAGIC = b"TRNB1"


@dataclass
class SlideRecord:
    slide_id: str
    case_id: str
    label: int
    split: str
    files: list[str] = field(default_factory=list)


def write_bag(
    path: str,
    features: np.ndarray,
    genes: np.ndarray,
    label: int,
    slide_id: str,
    case_id: str,
) -> None:
    """Serialize one bag; features (k, d) float32, genes (G,) float32."""
    features = np.ascontiguousarray(features, dtype="<f4")
    genes = np.ascontiguousarray(genes, dtype="<f4").ravel()
    if features.ndim != 2 or features.shape[0] == 0 or features.shape[1] == 0:
        raise InputError(f"bag features must be non-empty 2-D, got {features.shape}")
    if not np.isfinite(features).all() or not np.isfinite(genes).all():
        raise InputError("bag payload contains non-finite values")
    k, d = features.shape
    trailer = json.dumps(
        {"slide_id": slide_id, "case_id": case_id}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4I", k, d, genes.shape[0], int(label)))
        fh.write(features.tobytes())
        fh.write(genes.tobytes())
        fh.write(trailer)


def save_manifest(
    path: str,
    k: int,
    d: int,
    num_genes: int,
    classes: list[str],
    slides: list[SlideRecord],
) -> None:
    payload = {
        "format": "bagset/1",
        "k": int(k),
        "d": int(d),
        "num_genes": int(num_genes),
        "classes": [str(c) for c in classes],
        "slides": [
            {
                "slide_id": s.slide_id,
                "case_id": s.case_id,
                "label": int(s.label),
                "split": s.split,
                "files": list(s.files),
            }
            for s in slides
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
