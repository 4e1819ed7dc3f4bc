"""End-to-end checks of the command-line entry points."""

import json
import math
import os
import struct
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from slidegene.bagging import BagManifest, load_split
from slidegene.cli import main
from slidegene.evalmetrics import slide_vote
from slidegene.model import Model, load_checkpoint


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def tree_bytes(root):
    out = {}
    for base, _, files in os.walk(root):
        for name in files:
            path = os.path.join(base, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


def synth_args(out_dir, seed=3):
    return (
        "synth", "--out", str(out_dir), "--seed", str(seed),
        "--classes", "2", "--slides-per-class", "2", "--bags-per-slide", "2",
        "--k", "3", "--d", "4", "--genes", "4", "--tiles-per-slide", "12",
    )


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "small"
    code = main(list(synth_args(out)))
    assert code == 0
    return out


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def test_synth_reports_counts(tmp_path, capsys):
    code, out, _ = run(capsys, *synth_args(tmp_path / "ds"))
    assert code == 0
    assert "wrote 8 bags over 4 slides" in out
    assert os.path.exists(tmp_path / "ds" / "manifest.json")


def test_synth_deterministic_across_runs(tmp_path, capsys):
    code_a, _, _ = run(capsys, *synth_args(tmp_path / "a", seed=9))
    code_b, _, _ = run(capsys, *synth_args(tmp_path / "b", seed=9))
    assert code_a == 0 and code_b == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_synth_missing_required_arg_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synth"])
    assert exc.value.code == 2
    assert "--out" in capsys.readouterr().err


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["transmogrify"])
    assert exc.value.code == 2


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def test_validate_dataset_ok(small_dataset, capsys):
    code, out, _ = run(capsys, "validate", str(small_dataset))
    assert code == 0
    assert ": ok (8 bags, 4 slides)" in out


def test_validate_single_file_ok(small_dataset, capsys):
    manifest = BagManifest.load(os.path.join(small_dataset, "manifest.json"))
    path = os.path.join(small_dataset, manifest.slides[0].files[0])
    code, out, _ = run(capsys, "validate", path)
    assert code == 0
    assert "ok (k=3 d=4 genes=4)" in out


def test_validate_corrupted_bag_fails(small_dataset, tmp_path, capsys):
    manifest = BagManifest.load(os.path.join(small_dataset, "manifest.json"))
    src = os.path.join(small_dataset, manifest.slides[0].files[0])
    with open(src, "rb") as fh:
        blob = fh.read()
    bad = tmp_path / "bad.trnb"
    bad.write_bytes(b"XXXXX" + blob[5:])
    code, out, _ = run(capsys, "validate", str(bad))
    assert code == 1
    assert f"FAIL {bad}" in out
    assert "offset 0" in out


def test_validate_dataset_with_bad_bag_counts_failures(small_dataset, tmp_path, capsys):
    # copy the dataset, then truncate one bag
    import shutil

    copy = tmp_path / "copy"
    shutil.copytree(small_dataset, copy)
    manifest = BagManifest.load(os.path.join(copy, "manifest.json"))
    victim = os.path.join(copy, manifest.slides[1].files[0])
    with open(victim, "rb") as fh:
        blob = fh.read()
    with open(victim, "wb") as fh:
        fh.write(blob[: len(blob) // 2])
    code, out, _ = run(capsys, "validate", str(copy))
    assert code == 1
    assert f"FAIL {victim}" in out
    assert "1 bad (8 bags, 4 slides)" in out


def test_validate_missing_manifest_fails(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    code, out, _ = run(capsys, "validate", str(empty))
    assert code == 1
    assert "FAIL" in out


# ---------------------------------------------------------------------------
# genes / split
# ---------------------------------------------------------------------------


MATRIX_TSV = (
    "gene_id\tcaseA\tcaseB\n"
    "G1\t1.0\t2.0\n"
    "G2\t0.0\t0.0\n"
    "G3\t3.0\t4.0\n"
)


def test_genes_matrix_subcommand(tmp_path, capsys):
    matrix = tmp_path / "matrix.tsv"
    matrix.write_text(MATRIX_TSV)
    out_dir = tmp_path / "genes"
    code, out, _ = run(capsys, "genes", "--matrix", str(matrix), "--out", str(out_dir))
    assert code == 0
    assert "kept 2 of 3 genes over 2 cases" in out
    with open(out_dir / "genes.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    assert meta["gene_ids"] == ["G1", "G3"]
    assert meta["dropped_ids"] == ["G2"]
    lines = (out_dir / "table.tsv").read_text().splitlines()
    assert lines[0] == "gene_id\tcaseA\tcaseB"
    assert lines[1] == f"G1\t{math.log10(2.0)!r}\t{math.log10(3.0)!r}"
    assert lines[2] == f"G3\t{math.log10(4.0)!r}\t{math.log10(5.0)!r}"


def test_genes_cases_dir_subcommand(tmp_path, capsys):
    cases = tmp_path / "cases"
    cases.mkdir()
    (cases / "caseA.tsv").write_text("G1\t1.0\nG2\t0.0\n")
    (cases / "caseB.tsv").write_text("G1\t2.0\nG2\t0.0\n")
    (cases / "notes.txt").write_text("ignored\n")
    out_dir = tmp_path / "genes"
    code, out, _ = run(capsys, "genes", "--cases", str(cases), "--out", str(out_dir))
    assert code == 0
    assert "kept 1 of 2 genes over 2 cases" in out
    lines = (out_dir / "table.tsv").read_text().splitlines()
    assert lines[0] == "gene_id\tcaseA\tcaseB"
    assert lines[1].startswith("G1\t")


def test_genes_requires_exactly_one_source(tmp_path, capsys):
    code, _, err = run(
        capsys,
        "genes", "--matrix", "m.tsv", "--cases", str(tmp_path), "--out", str(tmp_path / "o"),
    )
    assert code == 2
    assert err.startswith("config error:")
    code, _, err = run(capsys, "genes", "--out", str(tmp_path / "o"))
    assert code == 2


def test_genes_empty_cases_dir_exits_1(tmp_path, capsys):
    cases = tmp_path / "cases"
    cases.mkdir()
    code, _, err = run(capsys, "genes", "--cases", str(cases), "--out", str(tmp_path / "o"))
    assert code == 1
    assert err.startswith("error:")
    assert "no .tsv files" in err


def test_split_subcommand(tmp_path, capsys):
    cases = {f"c{i:02d}": 0 for i in range(10)}
    cases_path = tmp_path / "cases.json"
    cases_path.write_text(json.dumps(cases))
    out = tmp_path / "split.json"
    code, stdout, _ = run(
        capsys, "split", "--cases", str(cases_path), "--out", str(out), "--seed", "5"
    )
    assert code == 0
    assert "'train': 8" in stdout and "'val': 1" in stdout and "'test': 1" in stdout
    with open(out, encoding="utf-8") as fh:
        payload = json.load(fh)
    assert payload["fractions"] == [0.8, 0.1, 0.1]
    assert sorted(payload["assignment"]) == sorted(cases)
    assert set(payload["assignment"].values()) == {"train", "val", "test"}
    # same seed, same file bytes
    out2 = tmp_path / "split2.json"
    run(capsys, "split", "--cases", str(cases_path), "--out", str(out2), "--seed", "5")
    assert out.read_bytes() == out2.read_bytes()


def test_split_bad_fractions_exits_2(tmp_path, capsys):
    cases_path = tmp_path / "cases.json"
    cases_path.write_text(json.dumps({"c0": 0}))
    code, _, err = run(
        capsys,
        "split", "--cases", str(cases_path), "--out", str(tmp_path / "o.json"),
        "--fractions", "0.5,0.5",
    )
    assert code == 2
    assert "config error:" in err


# ---------------------------------------------------------------------------
# bag
# ---------------------------------------------------------------------------

PINK = (234, 128, 176)


def write_slideset(root, slides, k=2):
    """Build a slideset/1 directory; each slide is (id, label, rgb, case_id)."""
    entries = []
    for slide_id, label, rgb, case_id in slides:
        img = np.zeros((28, 28, 3), dtype=np.uint8)
        img[:, :] = rgb
        Image.fromarray(img).save(os.path.join(root, f"{slide_id}.png"))
        rng = np.random.default_rng(hash(slide_id) % 2**32)
        np.save(
            os.path.join(root, f"{slide_id}.npy"),
            rng.normal(size=(2, 2, 6)).astype(np.float32),
        )
        entries.append(
            {
                "slide_id": slide_id,
                "case_id": case_id,
                "label": label,
                "thumbnail": f"{slide_id}.png",
                "features": f"{slide_id}.npy",
            }
        )
    spec = {"format": "slideset/1", "k": k, "classes": ["a", "b"], "slides": entries}
    path = os.path.join(root, "slideset.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec, fh)
    return path


def test_bag_pipeline_from_thumbnails(tmp_path, capsys):
    spec = write_slideset(tmp_path, [("s1", 0, PINK, "caseA")])
    out = tmp_path / "bagged"
    code, stdout, err = run(
        capsys,
        "bag", "--input", spec, "--out", str(out), "--bags-per-slide", "3", "--seed", "1",
    )
    assert code == 0
    assert err == ""
    assert "bagged 1 slides, 0 failed" in stdout
    manifest = BagManifest.load(os.path.join(out, "manifest.json"))
    assert (manifest.k, manifest.d, manifest.num_genes) == (2, 6, 0)
    assert len(manifest.slides) == 1
    assert len(manifest.slides[0].files) == 3
    code, _, _ = run(capsys, "validate", str(out))
    assert code == 0
    # same inputs and seed give identical bag bytes
    out2 = tmp_path / "bagged2"
    run(capsys, "bag", "--input", spec, "--out", str(out2), "--bags-per-slide", "3", "--seed", "1")
    with open(os.path.join(out, manifest.slides[0].files[0]), "rb") as fh:
        blob_a = fh.read()
    with open(os.path.join(out2, manifest.slides[0].files[0]), "rb") as fh:
        blob_b = fh.read()
    assert blob_a == blob_b
    assert blob_a.startswith(b"TRNB1")
    assert struct.unpack_from("<4I", blob_a, 5) == (2, 6, 0, 0)


def test_bag_with_gene_table(tmp_path, capsys):
    spec = write_slideset(tmp_path, [("s1", 0, PINK, "caseA")])
    matrix = tmp_path / "matrix.tsv"
    matrix.write_text(
        "gene_id\tcaseA\tcaseB\nG1\t1.0\t2.0\nG2\t0.0\t0.0\nG3\t3.0\t4.0\nG4\t5.0\t6.0\n"
    )
    out = tmp_path / "bagged"
    code, _, _ = run(
        capsys,
        "bag", "--input", spec, "--out", str(out),
        "--genes", str(matrix), "--bags-per-slide", "1", "--seed", "0",
    )
    assert code == 0
    manifest = BagManifest.load(os.path.join(out, "manifest.json"))
    assert manifest.num_genes == 3  # G2 dropped by the median filter
    ds = load_split(manifest, str(out), "train")
    expected = np.log10(1.0 + np.array([1.0, 3.0, 5.0]))
    np.testing.assert_allclose(ds.genes[0], expected, atol=1e-6)


def test_bag_missing_case_fails_that_slide(tmp_path, capsys):
    spec = write_slideset(
        tmp_path, [("s1", 0, PINK, "caseA"), ("s2", 1, PINK, "caseZ")]
    )
    matrix = tmp_path / "matrix.tsv"
    matrix.write_text("gene_id\tcaseA\nG1\t1.0\nG2\t3.0\n")
    out = tmp_path / "bagged"
    code, stdout, err = run(
        capsys,
        "bag", "--input", spec, "--out", str(out),
        "--genes", str(matrix), "--bags-per-slide", "1", "--seed", "0",
    )
    assert code == 1
    assert "FAIL s2" in err
    assert "caseZ" in err
    assert "bagged 1 slides, 1 failed" in stdout
    manifest = BagManifest.load(os.path.join(out, "manifest.json"))
    assert [s.slide_id for s in manifest.slides] == ["s1"]


def test_bag_zero_tissue_slide_fails(tmp_path, capsys):
    spec = write_slideset(
        tmp_path, [("good", 0, PINK, "caseA"), ("blank", 1, (255, 255, 255), "caseB")]
    )
    out = tmp_path / "bagged"
    code, stdout, err = run(
        capsys, "bag", "--input", spec, "--out", str(out), "--bags-per-slide", "2", "--seed", "0"
    )
    assert code == 1
    assert "FAIL blank" in err
    assert "no tissue tiles" in err
    assert "bagged 1 slides, 1 failed" in stdout
    manifest = BagManifest.load(os.path.join(out, "manifest.json"))
    assert [s.slide_id for s in manifest.slides] == ["good"]
    code, _, _ = run(capsys, "validate", str(out))
    assert code == 0


def test_bag_rejects_wrong_format_tag(tmp_path, capsys):
    path = tmp_path / "slideset.json"
    path.write_text(json.dumps({"format": "slideset/9", "slides": []}))
    code, _, err = run(capsys, "bag", "--input", str(path), "--out", str(tmp_path / "o"))
    assert code == 1
    assert "expected format slideset/1" in err


# ---------------------------------------------------------------------------
# train / eval / search round trip
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    base = tmp_path_factory.mktemp("roundtrip")
    dataset = base / "ds"
    code = main(
        [
            "synth", "--out", str(dataset), "--seed", "11",
            "--classes", "2", "--slides-per-class", "10", "--bags-per-slide", "4",
            "--k", "4", "--d", "8", "--genes", "6", "--tiles-per-slide", "30",
            "--separation", "4.0",
        ]
    )
    assert code == 0
    run_dir = base / "run"
    code = main(
        [
            "train", "--dataset", str(dataset), "--out", str(run_dir),
            "--epochs", "2", "--batch-size", "16", "--depth", "1", "--width", "16",
            "--heads", "2", "--seed", "0", "--quiet",
        ]
    )
    assert code == 0
    return dataset, run_dir


def test_train_writes_artifacts(trained):
    _, run_dir = trained
    for name in ("best.ckpt", "last.ckpt", "metrics.csv", "config.json"):
        assert os.path.exists(run_dir / name), name
    with open(run_dir / "config.json", encoding="utf-8") as fh:
        cfg = json.load(fh)
    # shapes inherited from the dataset manifest, flags from the command line
    assert cfg["model"]["feat_dim"] == 8
    assert cfg["model"]["bag_size"] == 4
    assert cfg["model"]["num_genes"] == 6
    assert cfg["model"]["num_classes"] == 2
    assert cfg["model"]["top_n_choices"] == [1, 2]
    assert cfg["train"]["epochs"] == 2


def test_eval_writes_reports(trained, tmp_path, capsys):
    dataset, run_dir = trained
    out = tmp_path / "eval"
    code, stdout, _ = run(
        capsys,
        "eval", "--checkpoint", str(run_dir / "best.ckpt"), "--dataset", str(dataset),
        "--out", str(out), "--split", "train",
    )
    assert code == 0
    assert stdout.startswith("train: accuracy ")
    assert "mean_pearson" in stdout
    for name in ("summary.json", "gene_report.csv", "confusion.csv", "pca.csv", "roc.csv"):
        assert os.path.exists(out / name), name
    with open(out / "summary.json", encoding="utf-8") as fh:
        summary = json.load(fh)
    assert summary["split"] == "train"
    assert summary["slides"] == 16
    assert 0.0 <= summary["classification"]["accuracy"] <= 1.0
    assert summary["genes"]["count"] == 6
    assert -1.0 <= summary["genes"]["mean_pearson"] <= 1.0
    confusion = np.loadtxt(out / "confusion.csv", delimiter=",", dtype=int)
    assert confusion.shape == (2, 2)
    assert confusion.sum() == 16
    lines = (out / "gene_report.csv").read_text().splitlines()
    assert len(lines) == 7  # header + one row per gene
    assert lines[0].startswith("gene_id,pearson_r")
    rows = (out / "pca.csv").read_text().splitlines()
    assert len(rows) == 17


def test_eval_small_split_skips_correlations(trained, tmp_path, capsys):
    dataset, run_dir = trained
    out = tmp_path / "eval_val"
    code, stdout, _ = run(
        capsys,
        "eval", "--checkpoint", str(run_dir / "best.ckpt"), "--dataset", str(dataset),
        "--out", str(out), "--split", "val",
    )
    assert code == 0
    with open(out / "summary.json", encoding="utf-8") as fh:
        summary = json.load(fh)
    # two slides: error metrics exist, correlations need three or more
    assert summary["slides"] == 2
    assert "errors" in summary["genes"]
    assert "mean_pearson" not in summary["genes"]


def test_eval_matches_library_computation(trained, tmp_path, capsys):
    dataset, run_dir = trained
    out = tmp_path / "eval_lib"
    code, _, _ = run(
        capsys,
        "eval", "--checkpoint", str(run_dir / "best.ckpt"), "--dataset", str(dataset),
        "--out", str(out), "--split", "train",
    )
    assert code == 0
    with open(out / "summary.json", encoding="utf-8") as fh:
        summary = json.load(fh)

    config, params, _, _ = load_checkpoint(str(run_dir / "best.ckpt"))
    model = Model(config, params)
    manifest = BagManifest.load(os.path.join(dataset, "manifest.json"))
    ds = load_split(manifest, str(dataset), "train")
    pred = model.predict(ds.bags, aggregate="mean").logits.argmax(axis=1)
    ids = np.array(ds.slide_ids)
    votes, truth = [], []
    for sid in dict.fromkeys(ds.slide_ids):
        idx = np.flatnonzero(ids == sid)
        votes.append(slide_vote(pred[idx]))
        truth.append(int(ds.labels[idx[0]]))
    accuracy = float(np.mean(np.array(votes) == np.array(truth)))
    assert summary["classification"]["accuracy"] == accuracy


def test_search_reports_map(trained, tmp_path, capsys):
    dataset, run_dir = trained
    out = tmp_path / "search.json"
    code, stdout, _ = run(
        capsys,
        "search", "--checkpoint", str(run_dir / "best.ckpt"), "--dataset", str(dataset),
        "--split", "train", "--subsets", "3", "--k", "1,2", "--out", str(out),
    )
    assert code == 0
    assert "MAP@1:" in stdout and "MAP@2:" in stdout
    with open(out, encoding="utf-8") as fh:
        payload = json.load(fh)
    assert payload["subsets"] == 3
    assert set(payload["map"]) == {"1", "2"}
    assert all(0.0 <= v <= 1.0 for v in payload["map"].values())


def test_train_unknown_config_key_exits_2(tmp_path, capsys):
    code, _, err = run(
        capsys,
        "train", "--dataset", str(tmp_path), "--out", str(tmp_path / "o"),
        "--set", "optimizer.lr=0.1",
    )
    assert code == 2
    assert err.startswith("config error:")


def test_module_entrypoint_runs(small_dataset):
    manifest = BagManifest.load(os.path.join(small_dataset, "manifest.json"))
    path = os.path.join(small_dataset, manifest.slides[0].files[0])
    proc = subprocess.run(
        [sys.executable, "-m", "slidegene.cli", "validate", path],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "ok (" in proc.stdout
