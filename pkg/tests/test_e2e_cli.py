import json

import numpy as np
import pandas as pd
import pytest

from main import main
from src.database.db import DatabaseSessionManager
from src.repository.icons import load_store
from src.routes.cluster import ASSIGNMENTS
from src.routes.experiment import REPORT_CSV, REPORT_JSON
from src.routes.extract import ICON_STORE, MANIFEST, PEFILE_TABLE
from src.routes.featurize import manifest_path
from src.routes.synth import LABELS
from src.routes.train_ae import trace_path
from src.schemas.classifier import ClassifierKind, REPORT_COLUMNS

FAST_CONFIG = "\n".join([
    "AE_EPOCHS=2",
    "AE_BATCH_SIZE=8",
    "MIN_CLUSTER_SIZE=5",
    "OUTLIER_K_MAX=6",
    "ALPHA_POINTS=3",
    "ALPHA_MIN=0.001",
    "ALPHA_MAX=0.1",
    "SOLVER_MAX_ITER=400",
    "LOG_LEVEL=WARNING",
]) + "\n"


def run(*args) -> int:
    return main([str(arg) for arg in args])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Every command run once, in order, over a small synthetic corpus."""
    root = tmp_path_factory.mktemp("pipeline")
    config = root / "fast.env"
    config.write_text(FAST_CONFIG, encoding="utf-8")
    common = ["--config", config]
    steps = {
        "synth": run(*common, "synth", root / "corpus", "--samples", 60, "--corpus-seed", 3),
        "extract": run(*common, "extract", root / "corpus" / "files", root / "extracted"),
        "train_ae": run(*common, "train-ae", root / "extracted" / ICON_STORE, root / "ae.json"),
        "featurize": run(*common, "featurize", root / "extracted" / ICON_STORE, root / "ae.json",
                         root / "features.csv"),
        "cluster": run(*common, "cluster", root / "features.csv", root / "clusters"),
        "assign": run(*common, "assign", root / "features.csv", root / "clusters", root / "assigned.csv"),
        "experiment": run(*common, "experiment", root / "extracted" / PEFILE_TABLE, root / "clusters" / ASSIGNMENTS,
                          root / "corpus" / LABELS, root / "report"),
    }
    return root, config, steps


def test_every_step_succeeds(pipeline):
    _, _, steps = pipeline
    assert steps == {name: 0 for name in steps}


def test_extract_outputs(pipeline):
    root, _, _ = pipeline
    labels = pd.read_csv(root / "corpus" / LABELS, dtype={"key": str})
    pefile = pd.read_csv(root / "extracted" / PEFILE_TABLE, dtype={"sha256": str})
    assert len(labels) == 60
    assert sorted(pefile["sha256"]) == sorted(labels["key"])
    icons, failures = load_store(root / "extracted" / ICON_STORE)
    assert failures == []
    assert len(icons) == int((labels["template"] >= 0).sum())


def test_train_ae_trace(pipeline):
    root, _, _ = pipeline
    trace = pd.read_csv(trace_path(root / "ae.json"))
    assert trace["epoch"].tolist() == [0, 1]
    assert np.all(np.isfinite(trace["mse"]))


def test_featurize_is_bit_identical_on_rerun(pipeline):
    root, config, _ = pipeline
    features = root / "features.csv"
    header = features.read_text().splitlines()[0].split(",")
    assert len(header) == 1 + 1114
    assert header[0] == "key" and header[1] == "mc_00" and header[-1] == "ae_511"
    again = root / "features_again.csv"
    assert run("--config", config, "featurize", root / "extracted" / ICON_STORE, root / "ae.json", again) == 0
    assert again.read_bytes() == features.read_bytes()
    manifest = json.loads(manifest_path(features).read_text())
    assert manifest["processed"] == len(features.read_text().splitlines()) - 1
    assert manifest["failures"] == []


def test_cluster_and_assign(pipeline):
    root, _, _ = pipeline
    document = json.loads((root / "clusters" / "cluster_model.json").read_text())
    num_ids = document["num_dense_clusters"] + document["num_outlier_clusters"]
    stored = pd.read_csv(root / "clusters" / ASSIGNMENTS, dtype={"key": str})
    assigned = pd.read_csv(root / "assigned.csv", dtype={"key": str})
    features = pd.read_csv(root / "features.csv", usecols=["key"], dtype={"key": str})
    assert len(stored) == len(assigned) == len(features)
    assert stored["cluster_id"].between(0, num_ids - 1).all()
    assert assigned["cluster_id"].between(0, num_ids - 1).all()


def test_experiment_report(pipeline):
    root, config, _ = pipeline
    report = pd.read_csv(root / "report" / REPORT_CSV)
    assert list(report.columns) == REPORT_COLUMNS
    assert report["model"].tolist() == [kind.value for kind in ClassifierKind for _ in range(2)]
    assert report["icon"].tolist() == ["no", "yes"] * 3
    assert report["test_auc"].between(0.0, 1.0).all()
    document = json.loads((root / "report" / REPORT_JSON).read_text())
    cluster_model = json.loads((root / "clusters" / "cluster_model.json").read_text())
    num_ids = cluster_model["num_dense_clusters"] + cluster_model["num_outlier_clusters"]
    assert [record["num_columns"] for record in document] == [9, 9 + num_ids] * 3
    for kind in ClassifierKind:
        for arm in ("yes", "no"):
            assert (root / "report" / f"cv_{kind.value}_{arm}.csv").is_file()
            roc = pd.read_csv(root / "report" / f"roc_{kind.value}_{arm}.csv")
            assert roc.iloc[0].tolist() == [0.0, 0.0] and roc.iloc[-1].tolist() == [1.0, 1.0]

    rerun = root / "report_again"
    assert run("--config", config, "experiment", root / "extracted" / PEFILE_TABLE, root / "clusters" / ASSIGNMENTS,
               root / "corpus" / LABELS, rerun) == 0
    assert (rerun / REPORT_CSV).read_bytes() == (root / "report" / REPORT_CSV).read_bytes()
    assert run("--config", config, "experiment", root / "extracted" / PEFILE_TABLE, root / "clusters" / ASSIGNMENTS,
               root / "corpus" / LABELS, root / "report_absent", "--cluster-model", root / "absent") == 2


def test_extract_corpus_dir(run_cli, corpus_dir, config_file, tmp_path):
    out = tmp_path / "out"
    # Calling the command under test
    assert run_cli("--config", config_file, "extract", corpus_dir, out) == 0
    # Verifying the PEfile rows, the icon store and the manifest
    pefile = pd.read_csv(out / PEFILE_TABLE)
    assert len(pefile) == 4
    icons, _ = load_store(out / ICON_STORE)
    assert len(icons) == 4
    manifest = json.loads((out / MANIFEST).read_text())
    assert manifest["inputs"] == 6
    assert manifest["processed"] == 5
    assert [failure["name"] for failure in manifest["failures"]] == ["broken.exe"]


def test_extract_bad_inputs(run_cli, tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert run_cli("extract", empty, tmp_path / "out") == 2
    assert run_cli("extract", tmp_path / "absent", tmp_path / "out") == 2
    garbage = tmp_path / "garbage"
    garbage.mkdir()
    (garbage / "a.bin").write_bytes(b"not a pe")
    assert run_cli("extract", garbage, tmp_path / "out") == 2


def test_train_ae_and_featurize_preconditions(run_cli, corpus_dir, config_file, tmp_path):
    empty_store = tmp_path / "empty.sqlite"
    DatabaseSessionManager.for_path(empty_store).close()
    assert run_cli("--config", config_file, "train-ae", empty_store, tmp_path / "ae.json") == 2
    assert run_cli("--config", config_file, "train-ae", tmp_path / "absent.sqlite", tmp_path / "ae.json") == 2

    assert run_cli("--config", config_file, "extract", corpus_dir, tmp_path / "out") == 0
    store = tmp_path / "out" / ICON_STORE
    assert run_cli("--config", config_file, "featurize", store, tmp_path / "absent.json", tmp_path / "f.csv") == 2


def test_train_ae_is_deterministic(run_cli, corpus_dir, config_file, tmp_path):
    assert run_cli("--config", config_file, "extract", corpus_dir, tmp_path / "out") == 0
    store = tmp_path / "out" / ICON_STORE
    assert run_cli("--config", config_file, "--seed", 5, "train-ae", store, tmp_path / "a.json") == 0
    assert run_cli("--config", config_file, "--seed", 5, "train-ae", store, tmp_path / "b.json") == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_bad_configuration(run_cli, tmp_path):
    assert run_cli("--config", tmp_path / "absent.env", "synth", tmp_path / "s") == 2
    bad = tmp_path / "bad.env"
    bad.write_text("K_FOLDS=1\n", encoding="utf-8")
    assert run_cli("--config", bad, "synth", tmp_path / "s") == 2
    assert run_cli("synth", tmp_path / "s", "--samples", 0) == 2


def test_synth_writes_files_and_labels(run_cli, tmp_path):
    assert run_cli("synth", tmp_path / "s", "--samples", 12, "--corpus-seed", 1) == 0
    files = sorted((tmp_path / "s" / "files").iterdir())
    labels = pd.read_csv(tmp_path / "s" / LABELS, dtype={"key": str})
    assert len(files) == 12
    assert set(labels["label"]) <= {"malware", "benign"}
    assert labels["key"].tolist() == sorted(labels["key"])


@pytest.mark.slow
def test_icon_clusters_improve_detection(tmp_path):
    config = tmp_path / "replication.env"
    config.write_text("\n".join(["AE_EPOCHS=10", "ALPHA_POINTS=7", "SOLVER_MAX_ITER=3000", "LOG_LEVEL=WARNING"]) + "\n",
                      encoding="utf-8")
    common = ["--config", config]
    assert run(*common, "synth", tmp_path / "corpus", "--samples", 400) == 0
    assert run(*common, "extract", tmp_path / "corpus" / "files", tmp_path / "extracted") == 0
    assert run(*common, "train-ae", tmp_path / "extracted" / ICON_STORE, tmp_path / "ae.json") == 0
    assert run(*common, "featurize", tmp_path / "extracted" / ICON_STORE, tmp_path / "ae.json",
               tmp_path / "features.csv") == 0
    assert run(*common, "cluster", tmp_path / "features.csv", tmp_path / "clusters") == 0
    assert run(*common, "experiment", tmp_path / "extracted" / PEFILE_TABLE, tmp_path / "clusters" / ASSIGNMENTS,
               tmp_path / "corpus" / LABELS, tmp_path / "report") == 0
    report = pd.read_csv(tmp_path / "report" / REPORT_CSV)
    with_icon = report[report["icon"] == "yes"].set_index("model")
    without = report[report["icon"] == "no"].set_index("model")
    gain_accuracy = with_icon["test_accuracy"] - without["test_accuracy"]
    gain_auc = with_icon["test_auc"] - without["test_auc"]
    for kind in ClassifierKind:
        assert gain_accuracy[kind.value] >= 0.05, kind.value
        assert gain_auc[kind.value] >= 0.0, kind.value
