"""
SUDF Saliency - Result Storage & Persistence
Handles saliency outputs, convergence logs, per-iteration snapshots and the run index.
"""
import json
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from config import DEFAULT_OUTPUT_DIR, debug_log
from hsio import load_saliency_raw, save_saliency


def label_palette(n_labels: int) -> np.ndarray:
    """Fixed pseudo-random RGB colour per cluster id."""
    return np.random.default_rng(0).integers(0, 256, size=(max(n_labels, 1), 3), dtype=np.uint8)


class ResultStore:
    """Manages one output directory: saliency maps, convergence CSVs and index.json."""

    def __init__(self, directory: Optional[Path] = None):
        self.directory = Path(directory) if directory is not None else DEFAULT_OUTPUT_DIR
        self.directory.mkdir(parents=True, exist_ok=True)
        self.index_file = self.directory / "index.json"
        self.index = self._load_index()

    def _load_index(self) -> dict:
        if self.index_file.exists():
            with open(self.index_file, "r", encoding="utf-8") as f:
                return json.load(f)
        return {"results": []}

    def _save_index(self):
        # Sorted by stem and free of timestamps so reruns produce the same bytes
        self.index["results"].sort(key=lambda r: r["stem"])
        with open(self.index_file, "w", encoding="utf-8") as f:
            json.dump(self.index, f, indent=2, ensure_ascii=False)
            f.write("\n")

    def paths_for(self, stem: str) -> dict:
        return {
            "png": self.directory / f"{stem}.png",
            "raw": self.directory / f"{stem}.f32",
            "convergence": self.directory / f"{stem}_convergence.csv",
        }

    def store_result(self, stem: str, saliency: np.ndarray, log=None, provenance: Optional[list[str]] = None,
                     variant: str = "") -> dict:
        """
        Write `<stem>.png`, `<stem>.f32` and, when a ConvergenceLog is given, `<stem>_convergence.csv`.
        Re-storing a stem replaces its index entry.
        """
        paths = self.paths_for(stem)
        save_saliency(saliency, paths["png"], paths["raw"], provenance)
        files = [paths["png"].name, paths["raw"].name]
        if log is not None:
            log.write_csv(paths["convergence"], provenance)
            files.append(paths["convergence"].name)

        entry = {
            "stem": stem,
            "variant": variant,
            "height": int(saliency.shape[0]),
            "width": int(saliency.shape[1]),
            "iterations": log.iterations if log is not None else 0,
            "cause": log.cause.value if log is not None and log.cause is not None else "",
            "files": files,
        }
        self.index["results"] = [r for r in self.index["results"] if r["stem"] != stem] + [entry]
        self._save_index()
        debug_log("[storage store_result] %s -> %s" % (stem, ", ".join(files)))
        return entry

    def get_result(self, stem: str) -> Optional[dict]:
        """Index entry for a stem with its saliency loaded from the raw file, or None."""
        for entry in self.index["results"]:
            if entry["stem"] == stem:
                raw_path = self.paths_for(stem)["raw"]
                if not raw_path.exists():
                    return None
                return {**entry, "saliency": load_saliency_raw(raw_path, entry["height"], entry["width"])}
        return None

    def get_all_results(self) -> list[dict]:
        return list(self.index["results"])

    def store_snapshot(self, stem: str, iteration: int, saliency: Optional[np.ndarray], labels: np.ndarray) -> Path:
        """Per-iteration saliency and cluster-label images under `snapshots/<stem>/`."""
        snap_dir = self.directory / "snapshots" / stem
        snap_dir.mkdir(parents=True, exist_ok=True)
        labels = np.asarray(labels)
        colours = label_palette(int(labels.max()) + 1)[labels]
        Image.fromarray(colours).save(snap_dir / f"iter_{iteration:04d}_labels.png")
        if saliency is not None:
            save_saliency(saliency, snap_dir / f"iter_{iteration:04d}_saliency.png")
        return snap_dir

    def debug_dir(self, stem: str) -> Path:
        path = self.directory / "debug" / stem
        path.mkdir(parents=True, exist_ok=True)
        return path
