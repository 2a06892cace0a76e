import json
import tempfile
import unittest
from pathlib import Path
from unittest.mock import MagicMock

import numpy as np
import pandas as pd
import pytest
from sqlalchemy.orm import Session

from conftest import checker_icon
from src.database.db import DatabaseSessionManager
from src.entity.models import IconRecord
from src.repository.icons import (
    corpus_hash,
    count_icons,
    get_icon,
    load_icons,
    load_store,
    save_icon,
    save_icons,
)
from src.repository.models import (
    CLUSTER_MODEL_FILE,
    load_ae_model,
    load_cluster_model,
    save_ae_model,
    save_cluster_model,
)
from src.repository.tables import (
    read_assignments,
    read_feature_table,
    read_labels,
    write_assignments,
    write_feature_table,
    write_manifest,
)
from src.schemas.autoencoder import AeConfig, TINY_ARCHITECTURE
from src.schemas.cluster import ClusterParams
from src.schemas.manifest import Manifest, ManifestFailure
from src.services.autoencoder import ae_init
from src.services.clustering import assign_many, build_cluster_model
from src.services.errors import BadInput, KeyMismatch, ModelFormatError


class TestIconRepository(unittest.TestCase):

    def setUp(self) -> None:
        self.session = MagicMock(spec=Session)
        self.icon = checker_icon(8)

    def test_save_icon(self):
        self.session.merge.side_effect = lambda record: record
        # Calling the function under test
        result = save_icon("a" * 64, self.icon, "x.exe", "pe", self.session)
        # Verifying the record and the commit
        self.assertIsInstance(result, IconRecord)
        self.assertEqual(result.icon_sha256, self.icon.content_hash())
        self.assertEqual((result.width, result.height), (8, 8))
        self.session.commit.assert_called_once()

    def test_get_icon(self):
        record = IconRecord(key="b" * 64, width=8, height=8, pixels=self.icon.pixels)
        mock_result = MagicMock()
        mock_result.scalar_one_or_none.return_value = record
        self.session.execute.return_value = mock_result
        self.assertEqual(get_icon("b" * 64, self.session), record)


@pytest.fixture()
def store(tmp_path):
    sessionmanager = DatabaseSessionManager.for_path(tmp_path / "icons.sqlite")
    yield sessionmanager, tmp_path / "icons.sqlite"
    sessionmanager.close()


def test_store_keeps_pixels_exactly(store):
    sessionmanager, path = store
    icons = [("k2", checker_icon(16)), ("k1", checker_icon(5, alpha=3))]
    with sessionmanager.session() as db:
        save_icons([(key, icon, f"{key}.exe", "pe") for key, icon in icons], db)
        assert count_icons(db) == 2
    loaded, failures = load_store(path)
    assert failures == []
    assert loaded == sorted(icons)
    assert corpus_hash(loaded) == corpus_hash(icons)


def test_corrupt_record_is_reported(store):
    sessionmanager, _ = store
    with sessionmanager.session() as db:
        save_icon("good", checker_icon(4), "good.exe", "pe", db)
        db.add(IconRecord(key="bad", icon_sha256="0" * 64, width=4, height=4, pixels=b"\x00" * 10))
        db.commit()
        icons, failures = load_icons(db)
    assert [key for key, _ in icons] == ["good"]
    assert [key for key, _ in failures] == ["bad"]


def test_missing_store(tmp_path):
    with pytest.raises(BadInput):
        load_store(tmp_path / "absent.sqlite")


def test_corpus_hash_depends_on_content():
    first = corpus_hash([("k", checker_icon(8))])
    assert first == corpus_hash([("k", checker_icon(8))])
    assert first != corpus_hash([("k", checker_icon(8, alpha=254))])
    assert first != corpus_hash([("j", checker_icon(8))])


class TestModelFiles(unittest.TestCase):

    def setUp(self) -> None:
        holder = tempfile.TemporaryDirectory()
        self.addCleanup(holder.cleanup)
        self.directory = Path(holder.name)

    def test_ae_model_round_trip(self):
        model = ae_init(AeConfig(seed=3), TINY_ARCHITECTURE).model_copy(update={"corpus_hash": "abc"})
        path = save_ae_model(model, self.directory / "ae.json")
        loaded = load_ae_model(path)
        self.assertEqual(loaded.architecture, model.architecture)
        self.assertEqual(loaded.corpus_hash, "abc")
        for name in model.params:
            self.assertTrue(np.array_equal(loaded.params[name], model.params[name]))

    def test_ae_model_format_errors(self):
        path = save_ae_model(ae_init(AeConfig(seed=0), TINY_ARCHITECTURE), self.directory / "ae.json")
        document = json.loads(path.read_text())
        document["format_version"] = 99
        path.write_text(json.dumps(document))
        with self.assertRaises(ModelFormatError):
            load_ae_model(path)
        document["format_version"] = 1
        document["layers"] = document["layers"][:-1]
        path.write_text(json.dumps(document))
        with self.assertRaises(ModelFormatError):
            load_ae_model(path)
        path.write_text("{not json")
        with self.assertRaises(ModelFormatError):
            load_ae_model(path)
        with self.assertRaises(FileNotFoundError):
            load_ae_model(self.directory / "absent.json")

    def test_cluster_model_round_trip(self):
        rng = np.random.Generator(np.random.PCG64(0))
        x = np.vstack([rng.normal(0.0, 0.1, size=(10, 3)), rng.normal(5.0, 0.1, size=(10, 3)),
                       rng.uniform(-3.0, 8.0, size=(4, 3))])
        model = build_cluster_model(x, ClusterParams(min_cluster_size=5, outlier_k_max=3),
                                    keys=[f"k{i:02d}" for i in range(24)], corpus_hash="feat")
        directory = self.directory / "cluster"
        # Calling the function under test
        save_cluster_model(model, directory)
        loaded = load_cluster_model(directory)
        # Verifying the reloaded model assigns exactly like the original
        self.assertTrue(np.array_equal(loaded.reference_matrix, model.reference_matrix))
        self.assertEqual(loaded.keys, model.keys)
        self.assertEqual(loaded.num_ids, model.num_ids)
        for a, b in zip(assign_many(loaded, x), assign_many(model, x)):
            self.assertTrue(np.array_equal(a, b))

        sidecar = next(directory.glob("reference-*.npy"))
        sidecar.write_bytes(sidecar.read_bytes()[:-8] + b"\x00" * 8)
        with self.assertRaises(ModelFormatError):
            load_cluster_model(directory / CLUSTER_MODEL_FILE)
        sidecar.unlink()
        with self.assertRaises(FileNotFoundError):
            load_cluster_model(directory)


def test_feature_table_round_trip_is_exact(tmp_path):
    rng = np.random.Generator(np.random.PCG64(1))
    matrix = rng.normal(size=(3, 4)) / 3.0
    write_feature_table(["c", "a", "b"], matrix, ["f0", "f1", "f2", "f3"], tmp_path / "f.csv")
    keys, loaded, columns = read_feature_table(tmp_path / "f.csv")
    assert keys == ["a", "b", "c"]
    assert columns == ["f0", "f1", "f2", "f3"]
    assert np.array_equal(loaded, matrix[[1, 2, 0]])


def test_feature_table_duplicate_keys(tmp_path):
    write_feature_table(["a", "a"], np.zeros((2, 1)), ["f0"], tmp_path / "f.csv")
    with pytest.raises(KeyMismatch):
        read_feature_table(tmp_path / "f.csv")


def test_assignments_round_trip(tmp_path):
    write_assignments(["b", "a"], np.array([3, 0]), np.array([True, False]), tmp_path / "a.csv")
    frame = read_assignments(tmp_path / "a.csv")
    assert frame["key"].tolist() == ["a", "b"]
    assert frame["cluster_id"].tolist() == [0, 3]
    assert frame["outlier_flag"].tolist() == [False, True]


@pytest.mark.parametrize("value, expected", [("malware", 1), ("Benign", -1), ("1", 1), ("0", -1),
                                             ("-1", -1), ("+1", 1)])
def test_label_values(tmp_path, value, expected):
    path = tmp_path / "labels.csv"
    pd.DataFrame({"key": ["00ff"], "label": [value]}).to_csv(path, index=False)
    assert read_labels(path) == {"00ff": expected}


def test_label_errors(tmp_path):
    path = tmp_path / "labels.csv"
    pd.DataFrame({"sha256": ["a"], "label": ["maybe"]}).to_csv(path, index=False)
    with pytest.raises(BadInput):
        read_labels(path)
    pd.DataFrame({"name": ["a"], "label": ["malware"]}).to_csv(path, index=False)
    with pytest.raises(BadInput):
        read_labels(path)
    with pytest.raises(BadInput):
        read_labels(tmp_path / "absent.csv")


def test_manifest_failures_sorted(tmp_path):
    manifest = Manifest(command="extract", inputs=3, failures=[ManifestFailure(name="z.exe", reason="r"),
                                                               ManifestFailure(name="a.exe", reason="r")])
    path = write_manifest(manifest, tmp_path / "manifest.json")
    document = json.loads(path.read_text())
    assert [failure["name"] for failure in document["failures"]] == ["a.exe", "z.exe"]
    assert path.read_text().endswith("\n")
