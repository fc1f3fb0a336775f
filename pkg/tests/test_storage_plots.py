"""
Tests for run storage, content hashes, sweep charts and run dependencies.
"""

import pandas as pd
import pytest

from latentflow.dependencies import RunDependencies
from latentflow.kinds import SweepKind
from latentflow.plots import line_chart_svg, sweep_chart_svg
from latentflow.settings import Settings
from latentflow.storage import (
    MANIFEST_FILE,
    METRICS_FILE,
    SWEEP_PLOT_FILE,
    RunStorage,
    blob_hash,
    file_hash,
    tree_hash,
)


@pytest.fixture
def sweep_table():
    """Small t-edit sweep result."""
    return pd.DataFrame({
        "t_edit": [0.0, 0.2, 0.0, 0.2],
        "method": ["ddim", "ddim", "regularized", "regularized"],
        "frechet": [0.5, 0.4, 0.3, 0.2],
        "lpaps": [1.0, 0.9, 0.8, 0.7],
        "adherence": [0.6, 0.7, 0.8, 0.9],
    })


class TestHashes:
    """Test git-compatible content ids."""

    def test_empty_blob(self):
        assert blob_hash(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"

    def test_hello_blob(self):
        assert blob_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"

    def test_file_hash(self, tmp_path):
        path = tmp_path / "a.txt"
        path.write_bytes(b"hello\n")
        assert file_hash(path) == blob_hash(b"hello\n")

    def test_tree_order_independent(self):
        assert tree_hash({"a": "1", "b": "2"}) == tree_hash({"b": "2", "a": "1"})
        assert tree_hash({"a": "1"}) != tree_hash({"a": "2"})


class TestRunStorage:
    """Test the run directory writer."""

    def test_creates_directory_on_demand(self, tmp_path):
        storage = RunStorage(tmp_path / "deep" / "run")
        assert not storage.root.exists()
        storage.write_json("x.json", {"a": 1})
        assert (tmp_path / "deep" / "run" / "x.json").exists()

    def test_manifest_round_trip(self, tmp_path):
        storage = RunStorage(tmp_path)
        storage.write_manifest({"command": "train", "seed": 3})
        assert storage.read_manifest() == {"command": "train", "seed": 3}
        assert storage.written == [MANIFEST_FILE]

    def test_metrics_row(self, tmp_path):
        storage = RunStorage(tmp_path)
        path = storage.write_metrics({"frechet": 0.1, "nfe": 64})
        table = pd.read_csv(path)
        assert path.name == METRICS_FILE
        assert table.to_dict("records") == [{"frechet": 0.1, "nfe": 64}]

    def test_written_names_unique(self, tmp_path):
        storage = RunStorage(tmp_path)
        storage.write_bytes("a.bin", b"1")
        storage.write_bytes("a.bin", b"2")
        storage.register(tmp_path / "other.lseq")
        assert storage.written == ["a.bin", "other.lseq"]

    def test_hash_inputs(self, tmp_path):
        path = tmp_path / "in.lseq"
        path.write_bytes(b"hello\n")
        hashes = RunStorage.hash_inputs({"input": path, "checkpoint": None, "missing": tmp_path / "nope"}, [("config", b"")])
        assert hashes["input"] == "ce013625030ba8dba906f756967f9e9ca394464a"
        assert hashes["config"] == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
        assert set(hashes) == {"input", "config", "inputs"}
        assert hashes["inputs"] == tree_hash({"input": hashes["input"], "config": hashes["config"]})


class TestCharts:
    """Test SVG rendering of sweep tables."""

    def test_svg_document(self, sweep_table):
        svg = sweep_chart_svg(sweep_table, SweepKind.T_EDIT)
        assert b"<svg" in svg

    def test_deterministic(self, sweep_table):
        assert sweep_chart_svg(sweep_table, SweepKind.T_EDIT) == sweep_chart_svg(sweep_table, SweepKind.T_EDIT)

    def test_skips_missing_metrics(self, sweep_table):
        svg = line_chart_svg(sweep_table, "t_edit", ["frechet", "straightness"], group=["method"], theme="minimal")
        assert b"<svg" in svg

    def test_written_to_storage(self, tmp_path, sweep_table):
        storage = RunStorage(tmp_path)
        path = storage.write_svg(sweep_chart_svg(sweep_table, "t-edit"))
        assert path.name == SWEEP_PLOT_FILE
        assert path.read_bytes().lstrip().startswith(b"<?xml")


class TestRunDependencies:
    """Test the pipeline context."""

    def test_progress_log(self, run_deps):
        run_deps.send_progress_update("training", 50, "half way")
        update = run_deps.progress_log[-1]
        assert update["stage"] == "training"
        assert update["progress"] == 50
        assert update["command"] == "test"

    def test_callback_receives_updates(self, tmp_path):
        seen = []
        deps = RunDependencies.from_settings(
            "generate", out_dir=str(tmp_path), seed=4, settings=Settings(_env_file=None), progress_callback=seen.append
        )
        deps.send_progress_update("writing", 100)
        assert deps.seed == 4
        assert seen[0]["stage"] == "writing"

    def test_callback_errors_are_swallowed(self, run_deps):
        def broken(update):
            raise RuntimeError("socket closed")

        run_deps.progress_callback = broken
        run_deps.send_progress_update("loading", 0)
        assert len(run_deps.progress_log) == 1

    def test_settings_defaults(self, tmp_path, monkeypatch):
        monkeypatch.setenv("LATENTFLOW_SEED", "11")
        deps = RunDependencies.from_settings("train", out_dir=str(tmp_path), settings=Settings(_env_file=None))
        assert deps.seed == 11
        assert deps.storage.root == tmp_path
        assert deps.elapsed >= 0.0
