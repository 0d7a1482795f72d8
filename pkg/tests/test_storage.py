import json

import numpy as np
from PIL import Image

from selfsup import ConvergenceLog, IterationRecord, TerminationCause
from storage import ResultStore, label_palette


def sample_log() -> ConvergenceLog:
    return ConvergenceLog(records=[IterationRecord(1, 4.0, None, None, 7, 1.0),
                                   IterationRecord(2, 3.5, 0.5, 0.25, 5, 1.0)],
                          cause=TerminationCause.MAX_ITERATIONS)


def test_store_and_get_result(tmp_path, rng):
    store = ResultStore(tmp_path)
    saliency = rng.uniform(size=(5, 6)).astype(np.float32).astype(np.float64)
    entry = store.store_result("scene_000", saliency, sample_log(), ["seed=0"], "hf-slic")
    assert entry["iterations"] == 2
    assert entry["cause"] == "max-iterations"
    assert sorted(entry["files"]) == ["scene_000.f32", "scene_000.png", "scene_000_convergence.csv"]

    fetched = ResultStore(tmp_path).get_result("scene_000")
    np.testing.assert_array_equal(fetched["saliency"], saliency)
    assert fetched["variant"] == "hf-slic"


def test_index_sorted_and_replaced(tmp_path):
    store = ResultStore(tmp_path)
    store.store_result("b", np.zeros((2, 2)))
    store.store_result("a", np.zeros((2, 2)))
    store.store_result("b", np.ones((3, 3)))
    index = json.loads((tmp_path / "index.json").read_text())
    assert [r["stem"] for r in index["results"]] == ["a", "b"]
    assert index["results"][1]["height"] == 3
    assert (tmp_path / "index.json").read_text().endswith("}\n")


def test_baseline_entry_without_log(tmp_path):
    entry = ResultStore(tmp_path).store_result("x", np.zeros((2, 2)), variant="mr-baseline")
    assert entry["iterations"] == 0 and entry["cause"] == ""
    assert not (tmp_path / "x_convergence.csv").exists()


def test_missing_result(tmp_path):
    assert ResultStore(tmp_path).get_result("nothing") is None


def test_snapshot_images(tmp_path):
    store = ResultStore(tmp_path)
    labels = np.array([[0, 1], [2, 1]])
    snap_dir = store.store_snapshot("s", 3, np.full((2, 2), 0.5), labels)
    with Image.open(snap_dir / "iter_0003_labels.png") as img:
        pixels = np.asarray(img)
    np.testing.assert_array_equal(pixels[0, 1], pixels[1, 1])
    np.testing.assert_array_equal(pixels[0, 0], label_palette(3)[0])
    assert (snap_dir / "iter_0003_saliency.png").exists()
    store.store_snapshot("s", 4, None, labels)
    assert not (snap_dir / "iter_0004_saliency.png").exists()


def test_palette_is_fixed():
    np.testing.assert_array_equal(label_palette(4), label_palette(4))
    assert label_palette(0).shape == (1, 3)
