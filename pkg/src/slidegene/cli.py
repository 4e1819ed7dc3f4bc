"""Command-line pipeline: synth, bag, genes, split, train, eval, search, validate."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
from PIL import Image

from .bagging import (
    BagManifest,
    SlideEntry,
    cluster_tiles,
    load_split,
    sample_bags,
    select_tiles,
    tissue_mask,
    validate_bag_file,
    write_bag,
)
from .config import resolve
from .errors import ConfigError, DataError, FormatError, InputError, SlidegeneError
from .evalmetrics import (
    build_search_subsets,
    classification_report,
    gene_correlation_table,
    mean_projection_per_slide,
    pca_project,
    prediction_errors,
    search_eval,
    slide_vote,
)
from .genes import filter_median_zero, ingest_expression, ingest_matrix, log_transform, split_cases
from .model import Model, load_checkpoint
from .synth import SynthSpec, generate
from .train import train as run_training


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _group_by_slide(slide_ids: list[str]) -> dict[str, np.ndarray]:
    ids = np.array(slide_ids)
    return {sid: np.flatnonzero(ids == sid) for sid in dict.fromkeys(slide_ids)}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = SynthSpec(
        classes=args.classes,
        slides_per_class=args.slides_per_class,
        bags_per_slide=args.bags_per_slide,
        k=args.k,
        d=args.d,
        num_genes=args.genes,
        tiles_per_slide=args.tiles_per_slide,
        separation=args.separation,
        sigma_slide=args.sigma_slide,
        sigma_instance=args.sigma_instance,
        gene_noise=args.gene_noise,
        seed=args.seed,
    )
    dataset = generate(spec, args.out)
    total = sum(len(s.files) for s in dataset.manifest.slides)
    print(f"wrote {total} bags over {len(dataset.manifest.slides)} slides to {args.out}")
    return 0


def _slide_features(entry: dict, base: str, tiles) -> np.ndarray:
    path = os.path.join(base, entry["features"])
    if not os.path.exists(path):
        raise DataError(f"{entry['slide_id']}: features file missing: {path}")
    grid = np.load(path)
    if grid.ndim == 3:
        # full tile grid indexed by (tile row, tile col)
        rows = np.array([t.row for t in tiles])
        cols = np.array([t.col for t in tiles])
        if rows.max() >= grid.shape[0] or cols.max() >= grid.shape[1]:
            raise DataError(
                f"{entry['slide_id']}: feature grid {grid.shape[:2]} smaller "
                "than the tile coordinate range"
            )
        return grid[rows, cols]
    if grid.ndim == 2:
        if grid.shape[0] != len(tiles):
            raise DataError(
                f"{entry['slide_id']}: {grid.shape[0]} feature rows for "
                f"{len(tiles)} selected tiles"
            )
        return grid
    raise DataError(f"{entry['slide_id']}: feature array must be 2-D or 3-D")


def cmd_bag(args) -> int:
    with open(args.input, encoding="utf-8") as fh:
        spec = json.load(fh)
    if spec.get("format") != "slideset/1":
        raise FormatError(f"{args.input}: expected format slideset/1")
    base = os.path.dirname(os.path.abspath(args.input))
    k = int(spec.get("k", 49))
    gene_table = None
    if args.genes:
        gene_table = log_transform(filter_median_zero(ingest_matrix(args.genes)))
    os.makedirs(os.path.join(args.out, "bags"), exist_ok=True)
    manifest = BagManifest(
        k=k,
        d=0,
        num_genes=gene_table.num_genes if gene_table else 0,
        classes=[str(c) for c in spec.get("classes", [])],
    )
    failures = []
    for i, entry in enumerate(spec["slides"]):
        slide_id = str(entry["slide_id"])
        try:
            img = np.asarray(Image.open(os.path.join(base, entry["thumbnail"])).convert("RGB"))
            mask = tissue_mask(img)
            tiles = select_tiles(mask)
            if not tiles:
                raise InputError(f"{slide_id}: no tissue tiles above threshold")
            feats = _slide_features(entry, base, tiles)
            if manifest.d == 0:
                manifest.d = int(feats.shape[1])
            elif feats.shape[1] != manifest.d:
                raise DataError(
                    f"{slide_id}: feature width {feats.shape[1]} != {manifest.d}"
                )
            case_id = str(entry.get("case_id", slide_id))
            if gene_table is not None:
                if case_id not in gene_table.cases:
                    raise DataError(f"{slide_id}: case {case_id} missing from gene table")
                genes = gene_table.case_vector(case_id)
            else:
                genes = np.zeros(0, dtype=np.float32)
            assignment = cluster_tiles(tiles, k=k, seed=(args.seed, 0, i))
            bags = sample_bags(
                assignment,
                feats,
                genes,
                label=int(entry["label"]),
                slide_id=slide_id,
                case_id=case_id,
                count=args.bags_per_slide,
                seed=(args.seed, 1, i),
            )
            files = []
            for b, bag in enumerate(bags):
                rel = os.path.join("bags", f"{slide_id}_bag{b:03d}.trnb")
                write_bag(os.path.join(args.out, rel), bag)
                files.append(rel)
            manifest.slides.append(
                SlideEntry(
                    slide_id=slide_id,
                    case_id=case_id,
                    label=int(entry["label"]),
                    split=str(entry.get("split", "train")),
                    files=files,
                )
            )
        except SlidegeneError as exc:
            failures.append(slide_id)
            print(f"FAIL {slide_id}: {exc}", file=sys.stderr)
    manifest.save(os.path.join(args.out, "manifest.json"))
    print(f"bagged {len(manifest.slides)} slides, {len(failures)} failed")
    return 1 if failures else 0


def cmd_genes(args) -> int:
    if bool(args.matrix) == bool(args.cases):
        raise ConfigError("give exactly one of --matrix or --cases")
    if args.matrix:
        table = ingest_matrix(args.matrix)
    else:
        files = sorted(
            f for f in os.listdir(args.cases) if f.endswith(".tsv")
        )
        if not files:
            raise InputError(f"no .tsv files under {args.cases}")
        table = ingest_expression(
            {os.path.splitext(f)[0]: os.path.join(args.cases, f) for f in files}
        )
    before = table.num_genes
    table = log_transform(filter_median_zero(table))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "table.tsv"), "w", encoding="utf-8") as fh:
        fh.write("gene_id\t" + "\t".join(table.cases) + "\n")
        for g, gene in enumerate(table.gene_ids):
            row = "\t".join(repr(float(v)) for v in table.values[:, g])
            fh.write(f"{gene}\t{row}\n")
    with open(os.path.join(args.out, "genes.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {"gene_ids": table.gene_ids, "dropped_ids": table.dropped_ids},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    print(f"kept {table.num_genes} of {before} genes over {len(table.cases)} cases")
    return 0


def cmd_split(args) -> int:
    with open(args.cases, encoding="utf-8") as fh:
        case_labels = {str(k): int(v) for k, v in json.load(fh).items()}
    fractions = tuple(float(x) for x in args.fractions.split(","))
    if len(fractions) != 3:
        raise ConfigError(f"need three comma-separated fractions, got {args.fractions!r}")
    spec = split_cases(case_labels, fractions, seed=args.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(
            {"fractions": list(spec.fractions), "assignment": spec.assignment},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    counts = {name: len(spec.cases_for(name)) for name in ("train", "val", "test")}
    print(f"split {len(case_labels)} cases: {counts}")
    return 0


def _load_manifest(dataset: str) -> BagManifest:
    return BagManifest.load(os.path.join(dataset, "manifest.json"))


def cmd_train(args) -> int:
    cfg = resolve(args.config, args.set)
    manifest = _load_manifest(args.dataset)
    cfg.model.feat_dim = manifest.d
    cfg.model.bag_size = manifest.k
    cfg.model.num_genes = manifest.num_genes
    cfg.model.num_classes = max(2, len(manifest.classes))
    top_n = tuple(n for n in cfg.model.top_n_choices if n <= manifest.k)
    cfg.model.top_n_choices = top_n if top_n else (manifest.k,)
    for flag, target, key in (
        ("depth", cfg.model, "depth"),
        ("width", cfg.model, "width"),
        ("heads", cfg.model, "heads"),
        ("epochs", cfg.train, "epochs"),
        ("batch_size", cfg.train, "batch_size"),
        ("lr", cfg.train, "lr"),
        ("seed", cfg.train, "seed"),
        ("gamma", cfg.train, "gamma"),
        ("gene_loss", cfg.train, "gene_loss"),
    ):
        value = getattr(args, flag)
        if value is not None:
            setattr(target, key, value)
    cfg.data.dataset = args.dataset
    cfg.data.out = args.out
    cfg.validate()
    train_ds = load_split(manifest, args.dataset, "train")
    val_ds = load_split(manifest, args.dataset, "val")
    os.makedirs(args.out, exist_ok=True)
    cfg.save(os.path.join(args.out, "config.json"))
    model = Model(cfg.model, seed=cfg.train.seed)
    best, metrics = run_training(
        model,
        (train_ds.bags, train_ds.labels, train_ds.genes),
        (val_ds.bags, val_ds.labels, val_ds.genes),
        cfg.train,
        out_dir=args.out,
        resume_from=args.resume,
        log=print if not args.quiet else None,
    )
    best_epoch = min(metrics, key=lambda m: m.val_loss)
    print(
        f"done: best val loss {best_epoch.val_loss:.4f} at epoch {best_epoch.epoch}; "
        f"checkpoints in {args.out}"
    )
    return 0


def _predict_dataset(checkpoint: str, dataset: str, split: str, aggregate: str):
    config, params, _, _ = load_checkpoint(checkpoint)
    model = Model(config, params)
    manifest = _load_manifest(dataset)
    ds = load_split(manifest, dataset, split)
    out = model.predict(ds.bags, aggregate=aggregate)
    return manifest, ds, out


def _gene_ids_for(dataset: str, count: int) -> list[str]:
    path = os.path.join(dataset, "genes.json")
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            ids = json.load(fh).get("gene_ids", [])
        if len(ids) == count:
            return [str(g) for g in ids]
    return [f"g{i}" for i in range(count)]


def cmd_eval(args) -> int:
    manifest, ds, out = _predict_dataset(args.checkpoint, args.dataset, args.split, args.aggregate)
    groups = _group_by_slide(ds.slide_ids)
    bag_pred = out.logits.argmax(axis=1)
    scores = _softmax(out.logits)
    slide_ids = list(groups)
    slide_truth = np.array([int(ds.labels[idx[0]]) for idx in groups.values()])
    slide_pred = np.array([slide_vote(bag_pred[idx]) for idx in groups.values()])
    slide_scores = np.stack([scores[idx].mean(axis=0) for idx in groups.values()])
    report = classification_report(
        slide_pred, slide_truth, slide_scores, num_classes=len(manifest.classes)
    )

    os.makedirs(args.out, exist_ok=True)
    summary = {"classification": report.to_dict(), "split": args.split, "slides": len(slide_ids)}

    if manifest.num_genes > 0:
        pred = np.stack([out.S[idx].mean(axis=0) for idx in groups.values()])
        truth = np.stack([ds.genes[idx[0]] for idx in groups.values()])
        gene_ids = _gene_ids_for(args.dataset, manifest.num_genes)
        errors = prediction_errors(pred, truth, gene_ids)
        rows = (
            gene_correlation_table(pred, truth, gene_ids, alpha=args.alpha)
            if len(slide_ids) >= 3
            else []
        )
        by_gene = {r.gene_id: r for r in rows}
        with open(os.path.join(args.out, "gene_report.csv"), "w", encoding="utf-8") as fh:
            fh.write(
                "gene_id,pearson_r,pearson_p,spearman_rho,spearman_p,"
                "significant_hs,significant_bh,mae,rmse,rrmse\n"
            )
            for g, gene in enumerate(errors.gene_ids):
                r = by_gene.get(gene)
                cols = [gene]
                cols += (
                    [repr(r.pearson_r), repr(r.pearson_p), repr(r.spearman_rho), repr(r.spearman_p),
                     str(int(r.significant_hs)), str(int(r.significant_bh))]
                    if r
                    else ["", "", "", "", "", ""]
                )
                cols += [repr(float(errors.mae[g])), repr(float(errors.rmse[g])), repr(float(errors.rrmse[g]))]
                fh.write(",".join(cols) + "\n")
        summary["genes"] = {
            "count": manifest.num_genes,
            "errors": errors.summary(),
            "excluded_constant": errors.excluded,
        }
        if rows:
            summary["genes"].update(
                {
                    "mean_pearson": float(np.mean([r.pearson_r for r in rows])),
                    "mean_spearman": float(np.mean([r.spearman_rho for r in rows])),
                    "significant_hs": int(sum(r.significant_hs for r in rows)),
                    "significant_bh": int(sum(r.significant_bh for r in rows)),
                    "alpha": args.alpha,
                }
            )

    np.savetxt(
        os.path.join(args.out, "confusion.csv"),
        report.confusion,
        fmt="%d",
        delimiter=",",
    )
    if report.roc_fpr.size:
        with open(os.path.join(args.out, "roc.csv"), "w", encoding="utf-8") as fh:
            fh.write("fpr,tpr\n")
            for f, t in zip(report.roc_fpr, report.roc_tpr):
                fh.write(f"{repr(float(f))},{repr(float(t))}\n")

    projection = pca_project(out.c, dims=2)
    slide_points = mean_projection_per_slide(projection, ds.slide_ids)
    with open(os.path.join(args.out, "pca.csv"), "w", encoding="utf-8") as fh:
        fh.write("slide_id,label,pc1,pc2\n")
        for sid, idx in groups.items():
            point = slide_points[sid]
            fh.write(
                f"{sid},{int(ds.labels[idx[0]])},{repr(float(point[0]))},{repr(float(point[1]))}\n"
            )

    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    line = (
        f"{args.split}: accuracy {report.accuracy:.4f} "
        f"f1_macro {report.f1_macro:.4f} f1_weighted {report.f1_weighted:.4f} auc {report.auc:.4f}"
    )
    if "genes" in summary and "mean_pearson" in summary["genes"]:
        line += f" mean_pearson {summary['genes']['mean_pearson']:.4f}"
    print(line)
    return 0


def cmd_search(args) -> int:
    _, ds, out = _predict_dataset(args.checkpoint, args.dataset, args.split, "mean")
    k_values = tuple(int(x) for x in args.k.split(","))
    subsets = build_search_subsets(
        out.c, ds.labels, ds.slide_ids, ds.case_ids, num_subsets=args.subsets
    )
    result = search_eval(subsets, k_values, normalize_by_relevant=args.normalize_by_relevant)
    payload = {
        "split": args.split,
        "subsets": len(subsets),
        "map": {str(k): v for k, v in result.items()},
    }
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    for k in k_values:
        print(f"MAP@{k}: {result[k]:.4f}")
    return 0


def cmd_validate(args) -> int:
    failures = 0
    for target in args.paths:
        if os.path.isdir(target):
            try:
                manifest = _load_manifest(target)
            except (SlidegeneError, OSError, json.JSONDecodeError) as exc:
                print(f"FAIL {target}: {exc}")
                failures += 1
                continue
            bad = 0
            total = 0
            for entry in manifest.slides:
                for rel in entry.files:
                    total += 1
                    path = os.path.join(target, rel)
                    try:
                        k, d, g, label = validate_bag_file(path)
                        if (k, d, g) != (manifest.k, manifest.d, manifest.num_genes):
                            raise FormatError(
                                f"header ({k},{d},{g}) != manifest "
                                f"({manifest.k},{manifest.d},{manifest.num_genes})"
                            )
                        if label != entry.label:
                            raise FormatError(f"label {label} != manifest {entry.label}")
                    except (SlidegeneError, OSError) as exc:
                        print(f"FAIL {path}: {exc}")
                        bad += 1
            failures += bad
            status = "ok" if bad == 0 else f"{bad} bad"
            print(f"{target}: {status} ({total} bags, {len(manifest.slides)} slides)")
        else:
            try:
                k, d, g, _ = validate_bag_file(target)
                print(f"{target}: ok (k={k} d={d} genes={g})")
            except (SlidegeneError, OSError) as exc:
                print(f"FAIL {target}: {exc}")
                failures += 1
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slidegene",
        description="Bulk gene expression and subtype prediction from slide tile bags.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic bag dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--slides-per-class", type=int, default=10)
    p.add_argument("--bags-per-slide", type=int, default=100)
    p.add_argument("--k", type=int, default=49)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--genes", type=int, default=50)
    p.add_argument("--tiles-per-slide", type=int, default=200)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--sigma-slide", type=float, default=0.5)
    p.add_argument("--sigma-instance", type=float, default=1.0)
    p.add_argument("--gene-noise", type=float, default=0.05)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bag", help="turn slide thumbnails + tile features into bag files")
    p.add_argument("--input", required=True, help="slideset/1 manifest JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--genes", help="raw expression matrix TSV aligned by case_id")
    p.add_argument("--bags-per-slide", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bag)

    p = sub.add_parser("genes", help="ingest, filter, and log-transform expression tables")
    p.add_argument("--matrix", help="matrix TSV (genes x cases)")
    p.add_argument("--cases", help="directory of per-case two-column TSVs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_genes)

    p = sub.add_parser("split", help="stratified case-wise train/val/test assignment")
    p.add_argument("--cases", required=True, help="JSON {case_id: label}")
    p.add_argument("--out", required=True)
    p.add_argument("--fractions", default="0.8,0.1,0.1")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train on a bag dataset directory")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="YAML or JSON run config")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--resume", help="resume from a last.ckpt file")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--depth", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--gene-loss", choices=("mse", "mae"), dest="gene_loss")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="gene and classification reports for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--aggregate", choices=("mean", "harmonic"), default="mean")
    p.add_argument("--alpha", type=float, default=0.01)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("search", help="leave-one-patient-out retrieval MAP@K")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--subsets", type=int, default=100)
    p.add_argument("--k", default="5,10")
    p.add_argument("--normalize-by-relevant", action="store_true")
    p.add_argument("--out", help="write the MAP report JSON here")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("validate", help="check bag files or dataset directories")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SlidegeneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
