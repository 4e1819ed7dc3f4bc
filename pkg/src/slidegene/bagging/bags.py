"""Bag sampling over spatial clusters and the TRNB1 bag container format."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, FormatError, InputError
from .cluster import ClusterAssignment

MAGIC = b"TRNB1"
DEFAULT_BAGS_PER_SLIDE = 100


@dataclass
class Bag:
    features: np.ndarray  # (k, d) float32, rows in sorted-cluster order
    genes: np.ndarray  # (G,) float32
    label: int
    slide_id: str
    case_id: str


def sample_bags(
    assignment: ClusterAssignment,
    features: np.ndarray,
    genes: np.ndarray,
    label: int,
    slide_id: str,
    case_id: str,
    count: int = DEFAULT_BAGS_PER_SLIDE,
    seed=0,
) -> list[Bag]:
    """Draw `count` bags, each taking one tile uniformly from every cluster.

    `features` rows align with `assignment.tiles`. Bag row i holds the tile
    drawn from the i-th cluster in magnitude-sorted order, so positional
    encoding sees a stable spatial progression across bags and slides.
    """
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] != len(assignment.tiles):
        raise InputError(
            f"feature matrix {features.shape} does not match {len(assignment.tiles)} tiles"
        )
    genes = np.asarray(genes, dtype=np.float32).ravel()
    rng = np.random.default_rng(seed)
    member_lists = [assignment.members(c) for c in assignment.sorted_order]
    for order_pos, members in enumerate(member_lists):
        if members.size == 0:
            raise DataError(f"cluster at sorted position {order_pos} owns no tiles")
    bags = []
    for _ in range(count):
        rows = [members[rng.integers(members.size)] for members in member_lists]
        bags.append(
            Bag(
                features=features[rows].astype(np.float32),
                genes=genes,
                label=int(label),
                slide_id=slide_id,
                case_id=case_id,
            )
        )
    return bags


def write_bag(path: str, bag: Bag) -> None:
    """Serialize one bag: magic, LE u32 header, f32 payloads, JSON trailer."""
    k, d = bag.features.shape
    g = bag.genes.shape[0]
    trailer = json.dumps(
        {"slide_id": bag.slide_id, "case_id": bag.case_id}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4I", k, d, g, bag.label))
        fh.write(np.ascontiguousarray(bag.features, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(bag.genes, dtype="<f4").tobytes())
        fh.write(trailer)


def read_bag(path: str) -> Bag:
    with open(path, "rb") as fh:
        blob = fh.read()
    validate_bag_bytes(blob, origin=path)
    k, d, g, label = struct.unpack_from("<4I", blob, 5)
    off = 5 + 16
    feat = np.frombuffer(blob, dtype="<f4", count=k * d, offset=off).reshape(k, d)
    off += 4 * k * d
    genes = np.frombuffer(blob, dtype="<f4", count=g, offset=off)
    off += 4 * g
    trailer = json.loads(blob[off:].decode("utf-8"))
    return Bag(
        features=feat.copy(),
        genes=genes.copy(),
        label=int(label),
        slide_id=str(trailer["slide_id"]),
        case_id=str(trailer["case_id"]),
    )


def validate_bag_bytes(blob: bytes, origin: str = "<bytes>") -> tuple[int, int, int, int]:
    """Check structure of a serialized bag; FormatError carries a byte offset."""
    if len(blob) < 5 or blob[:5] != MAGIC:
        raise FormatError(f"{origin}: bad magic, expected {MAGIC!r}", offset=0)
    if len(blob) < 5 + 16:
        raise FormatError(f"{origin}: truncated header", offset=len(blob))
    k, d, g, label = struct.unpack_from("<4I", blob, 5)
    if k == 0 or d == 0:
        raise FormatError(f"{origin}: zero bag dimension k={k} d={d}", offset=5)
    body = 5 + 16 + 4 * (k * d + g)
    if len(blob) < body:
        raise FormatError(
            f"{origin}: payload needs {body} bytes, file has {len(blob)}",
            offset=len(blob),
        )
    payload = np.frombuffer(blob, dtype="<f4", count=k * d + g, offset=5 + 16)
    if not np.isfinite(payload).all():
        bad = int(np.flatnonzero(~np.isfinite(payload))[0])
        raise FormatError(f"{origin}: non-finite value in payload", offset=5 + 16 + 4 * bad)
    try:
        trailer = json.loads(blob[body:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{origin}: bad JSON trailer: {exc}", offset=body) from exc
    for key in ("slide_id", "case_id"):
        if key not in trailer:
            raise FormatError(f"{origin}: trailer missing {key!r}", offset=body)
    return k, d, g, label


def validate_bag_file(path: str) -> tuple[int, int, int, int]:
    with open(path, "rb") as fh:
        return validate_bag_bytes(fh.read(), origin=path)


@dataclass
class SlideEntry:
    slide_id: str
    case_id: str
    label: int
    split: str
    files: list[str] = field(default_factory=list)


@dataclass
class BagManifest:
    k: int
    d: int
    num_genes: int
    classes: list[str]
    slides: list[SlideEntry] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format": "bagset/1",
            "k": self.k,
            "d": self.d,
            "num_genes": self.num_genes,
            "classes": list(self.classes),
            "slides": [
                {
                    "slide_id": s.slide_id,
                    "case_id": s.case_id,
                    "label": s.label,
                    "split": s.split,
                    "files": list(s.files),
                }
                for s in self.slides
            ],
        }

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path: str) -> "BagManifest":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if raw.get("format") != "bagset/1":
            raise FormatError(f"{path}: unknown manifest format {raw.get('format')!r}")
        try:
            slides = [
                SlideEntry(
                    slide_id=str(s["slide_id"]),
                    case_id=str(s["case_id"]),
                    label=int(s["label"]),
                    split=str(s["split"]),
                    files=[str(f) for f in s["files"]],
                )
                for s in raw["slides"]
            ]
            return BagManifest(
                k=int(raw["k"]),
                d=int(raw["d"]),
                num_genes=int(raw["num_genes"]),
                classes=[str(c) for c in raw["classes"]],
                slides=slides,
            )
        except KeyError as exc:
            raise FormatError(f"{path}: manifest missing key {exc}") from exc


@dataclass
class BagDataset:
    """In-memory arrays for one split: bags, labels, gene targets, slide ids."""

    bags: np.ndarray  # (n, k, d) float32
    labels: np.ndarray  # (n,) int64
    genes: np.ndarray  # (n, G) float32
    slide_ids: list[str]
    case_ids: list[str]

    def __len__(self) -> int:
        return self.bags.shape[0]


def load_split(manifest: BagManifest, root: str, split: str) -> BagDataset:
    """Read every bag file for one split into dense arrays, manifest order."""
    bags, labels, genes, slide_ids, case_ids = [], [], [], [], []
    for entry in manifest.slides:
        if entry.split != split:
            continue
        for rel in entry.files:
            bag = read_bag(os.path.join(root, rel))
            if bag.features.shape != (manifest.k, manifest.d):
                raise DataError(
                    f"{rel}: bag shape {bag.features.shape} does not match "
                    f"manifest ({manifest.k}, {manifest.d})"
                )
            if bag.genes.shape[0] != manifest.num_genes:
                raise DataError(
                    f"{rel}: {bag.genes.shape[0]} gene targets, manifest says "
                    f"{manifest.num_genes}"
                )
            bags.append(bag.features)
            labels.append(bag.label)
            genes.append(bag.genes)
            slide_ids.append(bag.slide_id)
            case_ids.append(bag.case_id)
    if not bags:
        raise DataError(f"split {split!r} has no bags")
    return BagDataset(
        bags=np.stack(bags).astype(np.float32),
        labels=np.array(labels, dtype=np.int64),
        genes=np.stack(genes).astype(np.float32),
        slide_ids=slide_ids,
        case_ids=case_ids,
    )
