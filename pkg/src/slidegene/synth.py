"""Seeded synthetic dataset with planted class and gene structure."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .bagging import BagManifest, SlideEntry, cluster_tiles, sample_bags, write_bag
from .bagging.mask import TileCoord
from .errors import ConfigError
from .genes import GeneTable, filter_median_zero, log_transform, split_cases


@dataclass
class SynthSpec:
    classes: int = 3
    slides_per_class: int = 10
    bags_per_slide: int = 100
    k: int = 49
    d: int = 64
    num_genes: int = 50
    tiles_per_slide: int = 200
    grid: int = 64
    separation: float = 3.0
    sigma_slide: float = 0.5
    sigma_instance: float = 1.0
    gene_noise: float = 0.05
    seed: int = 0

    def validate(self):
        for name in (
            "classes",
            "slides_per_class",
            "bags_per_slide",
            "k",
            "d",
            "num_genes",
            "tiles_per_slide",
            "grid",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("separation", "sigma_slide", "sigma_instance", "gene_noise"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.classes > self.d:
            raise ConfigError("class means are axis-aligned; need d >= classes")


def full_scale_spec(**overrides) -> SynthSpec:
    """Spec preset matching the real-data tensor shapes (d=1024, big G)."""
    base = dict(d=1024, num_genes=500, slides_per_class=2, bags_per_slide=10)
    base.update(overrides)
    return SynthSpec(**base)


def class_means(spec: SynthSpec) -> np.ndarray:
    """Axis-aligned class centers: mean of class c is separation * e_c."""
    means = np.zeros((spec.classes, spec.d), dtype=np.float64)
    for c in range(spec.classes):
        means[c, c] = spec.separation
    return means


def mixing_matrix(spec: SynthSpec) -> np.ndarray:
    rng = np.random.default_rng((spec.seed, 0))
    return rng.normal(0.0, 1.0 / np.sqrt(spec.d), size=(spec.num_genes, spec.d))


@dataclass
class SynthDataset:
    root: str
    manifest: BagManifest
    meta: dict


def generate(spec: SynthSpec, out_dir: str) -> SynthDataset:
    """Write a full bag dataset with known slide means and gene signal.

    Instances of a slide are N(slide mean, sigma_instance^2 I); the slide mean
    is its class center plus a N(0, sigma_slide^2 I) offset. Raw gene targets
    are M @ slide_mean + noise, shifted positive and pushed through the real
    table filter + log transform so the file contents match the trained scale.
    """
    spec.validate()
    os.makedirs(os.path.join(out_dir, "bags"), exist_ok=True)
    means = class_means(spec)
    mix = mixing_matrix(spec)
    n_slides = spec.classes * spec.slides_per_class
    gene_rng = np.random.default_rng((spec.seed, 1))

    slide_ids, case_ids, labels = [], [], []
    slide_means = np.zeros((n_slides, spec.d), dtype=np.float64)
    features_per_slide = []
    coords_per_slide = []
    idx = 0
    for c in range(spec.classes):
        for s in range(spec.slides_per_class):
            rng = np.random.default_rng((spec.seed, 2, idx))
            slide_id = f"slide_c{c}_{s:03d}"
            case_id = f"case_c{c}_{s:03d}"
            m = means[c] + rng.normal(0.0, spec.sigma_slide, spec.d)
            rows = rng.integers(0, spec.grid, spec.tiles_per_slide)
            cols = rng.integers(0, spec.grid, spec.tiles_per_slide)
            coords = [
                TileCoord(row=int(r), col=int(q), tissue_fraction=1.0)
                for r, q in zip(rows, cols)
            ]
            feats = m[None, :] + rng.normal(
                0.0, spec.sigma_instance, (spec.tiles_per_slide, spec.d)
            )
            slide_ids.append(slide_id)
            case_ids.append(case_id)
            labels.append(c)
            slide_means[idx] = m
            features_per_slide.append(feats.astype(np.float32))
            coords_per_slide.append(coords)
            idx += 1

    raw_genes = slide_means @ mix.T + gene_rng.normal(
        0.0, spec.gene_noise, (n_slides, spec.num_genes)
    )
    # the expression pipeline needs non-negative raw values with nonzero medians
    shift = float(max(0.0, 1e-3 - raw_genes.min()))
    table = GeneTable(
        gene_ids=[f"GENE{g:05d}" for g in range(spec.num_genes)],
        cases=list(case_ids),
        values=raw_genes + shift,
    )
    table = log_transform(filter_median_zero(table))

    split = split_cases(
        {case: label for case, label in zip(case_ids, labels)},
        seed=spec.seed,
    )

    manifest = BagManifest(
        k=spec.k,
        d=spec.d,
        num_genes=table.num_genes,
        classes=[f"class{c}" for c in range(spec.classes)],
    )
    for i, slide_id in enumerate(slide_ids):
        assignment = cluster_tiles(coords_per_slide[i], k=spec.k, seed=(spec.seed, 3, i))
        bags = sample_bags(
            assignment,
            features_per_slide[i],
            table.case_vector(case_ids[i]),
            label=labels[i],
            slide_id=slide_id,
            case_id=case_ids[i],
            count=spec.bags_per_slide,
            seed=(spec.seed, 4, i),
        )
        files = []
        for b, bag in enumerate(bags):
            rel = os.path.join("bags", f"{slide_id}_bag{b:03d}.trnb")
            write_bag(os.path.join(out_dir, rel), bag)
            files.append(rel)
        manifest.slides.append(
            SlideEntry(
                slide_id=slide_id,
                case_id=case_ids[i],
                label=labels[i],
                split=split.assignment[case_ids[i]],
                files=files,
            )
        )
    manifest.save(os.path.join(out_dir, "manifest.json"))

    with open(os.path.join(out_dir, "genes.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {"gene_ids": table.gene_ids, "dropped_ids": table.dropped_ids},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")

    meta = {
        "spec": asdict(spec),
        "shift": shift,
        "mixing_matrix": mix.tolist(),
        "slide_means": {sid: slide_means[i].tolist() for i, sid in enumerate(slide_ids)},
        "labels": {sid: labels[i] for i, sid in enumerate(slide_ids)},
        "splits": split.assignment,
    }
    with open(os.path.join(out_dir, "synth_meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return SynthDataset(root=out_dir, manifest=manifest, meta=meta)


def oracle_bayes_accuracy(
    spec: SynthSpec, draws: int = 100_000, seed: int = 12345
) -> tuple[float, tuple[float, float]]:
    """Monte-Carlo accuracy of the optimal slide classifier, with a 95% CI.

    A slide's recoverable signal is its mean embedding, distributed
    N(class center, sigma_slide^2 I) with equal priors, for which the Bayes
    rule is nearest-center assignment. Instance noise averages out given
    enough tiles, so this bounds any bag-level classifier from above.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    means = class_means(spec)
    truth = rng.integers(0, spec.classes, draws)
    samples = means[truth] + rng.normal(0.0, spec.sigma_slide, (draws, spec.d))
    d2 = ((samples[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    predicted = d2.argmin(axis=1)
    p = float((predicted == truth).mean())
    half = 1.96 * np.sqrt(max(p * (1.0 - p), 1e-12) / draws)
    return p, (max(0.0, p - half), min(1.0, p + half))
