"""Batch DenseNet-121 feature extraction over tile images, written as bags.

Tiles are 224x224 RGB images at 20x magnification, listed per slide in
cluster-sorted order; consecutive groups of 49 form one bag. Features are the
1024 channels of the final DenseNet-121 feature map after ReLU and global
average pooling, in eval mode with the embedder's pretraining-dataset
normalization (mean .485/.456/.406, std .229/.224/.225).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError
from torchvision.models import DenseNet121_Weights, densenet121

from .errors import ConfigError, InputError
from .formats import SlideRecord, save_manifest, write_bag

FEATURE_WIDTH = 1024
TILES_PER_BAG = 49
TILE_SIDE = 224
NORM_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
NORM_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


@dataclass
class TileSlide:
    slide_id: str
    case_id: str
    label: int
    split: str
    tiles: list[str]
    genes: list[float] = field(default_factory=list)


@dataclass
class TileSet:
    root: str
    classes: list[str]
    gene_ids: list[str]
    slides: list[TileSlide]


@dataclass
class ExportJob:
    tileset: TileSet
    out: str
    batch_size: int = 32
    device: str = "cpu"
    pretrained: bool = False
    seed: int = 0

    def validate(self) -> "ExportJob":
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.device.startswith("cuda") and not torch.cuda.is_available():
            raise ConfigError(f"device {self.device!r} requested but CUDA is unavailable")
        return self


@dataclass
class ExportReport:
    exported: list[str]
    failed: list[tuple[str, str]]  # (slide_id, reason)
    bags_written: int


def load_tileset(path: str) -> TileSet:
    """Parse the input manifest: slide -> ordered tile paths (+ labels, genes)."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if raw.get("format") != "tileset/1":
        raise InputError(f"{path}: expected format tileset/1, got {raw.get('format')!r}")
    try:
        slides = [
            TileSlide(
                slide_id=str(s["slide_id"]),
                case_id=str(s.get("case_id", s["slide_id"])),
                label=int(s["label"]),
                split=str(s.get("split", "train")),
                tiles=[str(t) for t in s["tiles"]],
                genes=[float(g) for g in s.get("genes", [])],
            )
            for s in raw["slides"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: bad slide entry: {exc}") from exc
    return TileSet(
        root=os.path.dirname(os.path.abspath(path)),
        classes=[str(c) for c in raw.get("classes", [])],
        gene_ids=[str(g) for g in raw.get("gene_ids", [])],
        slides=slides,
    )


class TileEmbedder:
    """Eval-mode DenseNet-121 feature trunk with content-hash caching."""

    def __init__(self, device: str = "cpu", pretrained: bool = False, seed: int = 0):
        torch.manual_seed(seed)  # pins the random init when weights are absent
        weights = DenseNet121_Weights.IMAGENET1K_V1 if pretrained else None
        self.device = torch.device(device)
        self.trunk = densenet121(weights=weights).features.eval().to(self.device)
        self._cache: dict[str, np.ndarray] = {}

    def _load_tile(self, path: str) -> tuple[str, np.ndarray]:
        """Read one tile; returns (content digest, normalized CHW float32)."""
        with open(path, "rb") as fh:
            blob = fh.read()
        digest = hashlib.sha1(blob).hexdigest()
        if digest in self._cache:
            return digest, np.empty(0, dtype=np.float32)
        try:
            with Image.open(os.fspath(path)) as img:
                rgb = np.asarray(img.convert("RGB"))
        except (UnidentifiedImageError, OSError, SyntaxError) as exc:
            raise InputError(f"{path}: unreadable image: {exc}") from exc
        if rgb.shape != (TILE_SIDE, TILE_SIDE, 3):
            raise InputError(f"{path}: tile must be {TILE_SIDE}x{TILE_SIDE}x3, got {rgb.shape}")
        chw = ((rgb.astype(np.float32) / 255.0 - NORM_MEAN) / NORM_STD).transpose(2, 0, 1)
        return digest, chw

    def embed_paths(self, paths: list[str], batch_size: int = 32) -> np.ndarray:
        """Features for each path in order, (n, 1024) float32; caches by content."""
        digests: list[str] = []
        pending: list[tuple[str, np.ndarray]] = []
        seen_pending = set()
        for path in paths:
            digest, chw = self._load_tile(path)
            digests.append(digest)
            if digest not in self._cache and digest not in seen_pending:
                pending.append((digest, chw))
                seen_pending.add(digest)
        for start in range(0, len(pending), batch_size):
            chunk = pending[start : start + batch_size]
            batch = torch.from_numpy(np.stack([chw for _, chw in chunk])).to(self.device)
            with torch.no_grad():
                fmap = self.trunk(batch)
                pooled = F.adaptive_avg_pool2d(F.relu(fmap), (1, 1)).flatten(1)
            rows = pooled.cpu().numpy().astype(np.float32)
            for (digest, _), row in zip(chunk, rows):
                self._cache[digest] = row
        return np.stack([self._cache[d] for d in digests])


def _slide_bags(embedder: TileEmbedder, slide: TileSlide, root: str, batch_size: int,
                num_genes: int) -> tuple[np.ndarray, np.ndarray]:
    """All bag matrices for one slide: (bags, 49, 1024) plus the gene vector."""
    if not slide.tiles or len(slide.tiles) % TILES_PER_BAG != 0:
        raise InputError(
            f"{len(slide.tiles)} tiles is not a positive multiple of {TILES_PER_BAG}"
        )
    if len(slide.genes) != num_genes:
        raise InputError(f"gene vector length {len(slide.genes)} != {num_genes}")
    paths = [os.path.join(root, t) for t in slide.tiles]
    feats = embedder.embed_paths(paths, batch_size)
    bags = feats.reshape(-1, TILES_PER_BAG, FEATURE_WIDTH)
    return bags, np.asarray(slide.genes, dtype=np.float32)


def export(job: ExportJob) -> ExportReport:
    """Embed every slide's tiles and write a bag dataset the trainer loads as-is.

    Slides that fail (missing or corrupt tiles, bad counts, gene mismatch) are
    recorded and skipped; the manifest lists only exported slides.
    """
    job.validate()
    tileset = job.tileset
    num_genes = len(tileset.gene_ids) if tileset.gene_ids else (
        len(tileset.slides[0].genes) if tileset.slides else 0
    )
    embedder = TileEmbedder(job.device, job.pretrained, job.seed)
    os.makedirs(os.path.join(job.out, "bags"), exist_ok=True)
    records: list[SlideRecord] = []
    exported: list[str] = []
    failed: list[tuple[str, str]] = []
    bags_written = 0
    for slide in tileset.slides:
        try:
            bags, genes = _slide_bags(embedder, slide, tileset.root, job.batch_size, num_genes)
        except (InputError, OSError) as exc:
            failed.append((slide.slide_id, str(exc)))
            continue
        record = SlideRecord(slide.slide_id, slide.case_id, slide.label, slide.split)
        for b in range(bags.shape[0]):
            rel = os.path.join("bags", f"{slide.slide_id}_bag{b:03d}.trnb")
            write_bag(os.path.join(job.out, rel), bags[b], genes,
                      slide.label, slide.slide_id, slide.case_id)
            record.files.append(rel)
            bags_written += 1
        records.append(record)
        exported.append(slide.slide_id)
    save_manifest(os.path.join(job.out, "manifest.json"), TILES_PER_BAG,
                  FEATURE_WIDTH, num_genes, tileset.classes, records)
    return ExportReport(exported=exported, failed=failed, bags_written=bags_written)
