"""
SUDF Saliency - Command Line Interface
run: saliency maps for one cube or a directory of cubes. eval: metric report against masks.
bench: every variant over a dataset plus rankings. synth: synthetic scenes for testing.
"""
import argparse
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from PIL import Image

from config import (
    DEFAULT_OUTPUT_DIR, SETTING_TYPES, VARIANTS, ConfigError, debug_log, provenance_items, read_config_file,
    resolve_settings,
)
from hsio import HsioError, load_cube, load_mask, load_saliency_png, normalize_cube, render_pseudo_rgb, resolve_raw_path
from metrics import (
    REPORT_COLUMNS, MetricError, MetricReport, aggregate, evaluate, mean_pr_curve, pr_curve, write_pr_csv,
    write_report_csv,
)
from mrank import GraphError, MrParams, SingularSystemError, dump_graph, dump_stage_scores, rank_segments
from nncore import OptimizerState, save_checkpoint
from selfsup import SelfSupConfig, TerminationCause, run_baseline, run_selfsup
from slic import SlicError, SlicParams, compute_superpixels, save_boundary_overlay
from storage import ResultStore
from synthetic import DEFAULT_BANDS, DEFAULT_NOISE, DEFAULT_SIZE, make_scene, write_scene

BASELINE = "mr-baseline"
# Smaller is better only for KL divergence
ASCENDING_METRICS = {"kldiv"}
PIPELINE_ERRORS = (HsioError, SlicError, GraphError, SingularSystemError, MetricError, ValueError, ArithmeticError, OSError)


# ─── Run Configuration ───────────────────────────────────────────────────────

@dataclass(frozen=True)
class RunConfig:
    input: Path
    out: Path
    settings: dict = field(default_factory=dict)
    snapshot_every: int = 0
    debug_dumps: bool = False

    @property
    def variant(self) -> str:
        return self.settings["variant"]

    @property
    def seed(self) -> int:
        return self.settings["seed"]

    @property
    def workers(self) -> int:
        return self.settings["workers"]


def settings_from_args(args: argparse.Namespace, skip: tuple[str, ...] = ()) -> dict:
    """Defaults < --config file < explicit flags."""
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    overrides = {key: getattr(args, key, None) for key in SETTING_TYPES if key not in skip}
    settings = resolve_settings(file_values, overrides)
    if settings["workers"] < 1:
        raise ConfigError(f"workers must be >= 1, got {settings['workers']}")
    try:
        slic_params_from(settings)
        mr_params_from(settings)
        if settings["variant"] != BASELINE:
            SelfSupConfig.from_settings(settings)
            OptimizerState(settings["learning_rate"], settings["momentum"])
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return settings


def slic_params_from(settings: dict) -> SlicParams:
    return SlicParams(
        target_segments=settings["segments"],
        compactness=settings["compactness"],
        max_iterations=settings["slic_iterations"],
        connectivity_min_size=settings["connectivity_min_size"],
    )


def mr_params_from(settings: dict) -> MrParams:
    return MrParams(alpha=settings["alpha"], sigma_sq=settings["sigma_sq"])


def list_cubes(path: Path) -> list[Path]:
    """A single header, or every `*.hdr` in a directory, sorted by filename."""
    path = Path(path)
    if path.is_dir():
        return sorted(path.glob("*.hdr"), key=lambda p: p.name)
    return [path]


# ─── Per-image Services ──────────────────────────────────────────────────────

def _write_debug_dumps(store: ResultStore, stem: str, cube, features: np.ndarray, smap, settings: dict, net=None) -> None:
    debug_dir = store.debug_dir(stem)
    if cube.bands >= 3:
        rgb = render_pseudo_rgb(cube)
        Image.fromarray(rgb).save(debug_dir / "pseudo_rgb.png")
        save_boundary_overlay(rgb, smap, debug_dir / "superpixels.png")
    trace = rank_segments(features, smap, mr_params_from(settings))
    dump_graph(trace.graph, debug_dir / "graph.txt")
    dump_stage_scores(trace, debug_dir / "stage_scores.csv")
    if net is not None:
        save_checkpoint(net, debug_dir / "network.ckpt")


def process_cube(header_path: Path, settings: dict, out_dir: Path, snapshot_every: int = 0,
                 debug_dumps: bool = False) -> dict:
    """
    Load, normalize and run one cube with the configured variant.
    Never raises: returns {"success", "error", "stem", "saliency", "log"}.
    """
    header_path = Path(header_path)
    stem = header_path.stem
    try:
        raw_path = resolve_raw_path(header_path)
        cube = normalize_cube(load_cube(header_path, raw_path))
        store = ResultStore(out_dir)

        if settings["variant"] == BASELINE:
            saliency = run_baseline(cube, slic_params_from(settings), mr_params_from(settings))
            if debug_dumps:
                volume = np.asarray(cube.data, dtype=np.float64).transpose(1, 2, 0)
                _write_debug_dumps(store, stem, cube, volume, compute_superpixels(volume, slic_params_from(settings)), settings)
            return {"success": True, "error": "", "stem": stem, "saliency": saliency, "log": None}

        last = {}

        def on_iteration(state, result):
            last["state"], last["result"] = state, result
            if snapshot_every and result.iteration % snapshot_every == 0:
                store.store_snapshot(stem, result.iteration, result.saliency, result.labels.labels)

        saliency, log = run_selfsup(cube, SelfSupConfig.from_settings(settings), on_iteration=on_iteration)
        if debug_dumps:
            result = last["result"]
            _write_debug_dumps(store, stem, cube, result.features.transpose(1, 2, 0), result.superpixels,
                               settings, last["state"].net)
        return {"success": True, "error": "", "stem": stem, "saliency": saliency, "log": log}
    except PIPELINE_ERRORS as e:
        return {"success": False, "error": f"{header_path}: {e}", "stem": stem}


def _process_job(job: tuple) -> dict:
    return process_cube(*job)


def run_cubes(cubes: list[Path], settings: dict, out_dir: Path, snapshot_every: int = 0,
              debug_dumps: bool = False) -> dict:
    """Process cubes (in parallel when workers > 1) and store results in filename order."""
    jobs = [(path, settings, out_dir, snapshot_every, debug_dumps) for path in cubes]
    if settings["workers"] > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=settings["workers"]) as pool:
            results = list(pool.map(_process_job, jobs))
    else:
        results = [_process_job(job) for job in jobs]

    store = ResultStore(out_dir)
    provenance = provenance_items(settings)
    failures = []
    for result in results:
        if result["success"]:
            store.store_result(result["stem"], result["saliency"], result["log"], provenance, settings["variant"])
        else:
            failures.append(result["error"])
            print(f"Failed: {result['error']}", file=sys.stderr)
    return {"success": not failures, "processed": len(results) - len(failures), "failed": len(failures),
            "errors": failures, "store": store}


def evaluate_pair(pred_path: Path, gt_path: Path, settings: dict) -> dict:
    """Metrics for one prediction/mask pair. Never raises: returns {"success", "error", "report", "curve"}."""
    try:
        saliency = load_saliency_png(pred_path)
        mask = load_mask(gt_path)
        curve = pr_curve(saliency, mask)
        report = evaluate(saliency, mask, settings["auc_splits"], settings["seed"], settings["beta_sq"], curve=curve)
        return {"success": True, "error": "", "stem": Path(pred_path).stem, "report": report, "curve": curve}
    except PIPELINE_ERRORS as e:
        return {"success": False, "error": f"{pred_path}: {e}", "stem": Path(pred_path).stem}


def evaluate_dirs(pred_dir: Path, gt_dir: Path, settings: dict) -> dict:
    """Match `*.png` stems between the two directories and evaluate each pair in stem order."""
    preds = {p.stem: p for p in Path(pred_dir).glob("*.png")}
    masks = {p.stem: p for p in Path(gt_dir).glob("*.png")}
    matched = sorted(preds.keys() & masks.keys())
    unmatched = sorted(preds.keys() ^ masks.keys())
    rows, curves, errors = [], [], []
    for stem in matched:
        outcome = evaluate_pair(preds[stem], masks[stem], settings)
        if outcome["success"]:
            rows.append((stem, outcome["report"]))
            curves.append(outcome["curve"])
        else:
            errors.append(outcome["error"])
    return {"rows": rows, "curves": curves, "unmatched": unmatched, "errors": errors}


# ─── Commands ────────────────────────────────────────────────────────────────

def cmd_run(args: argparse.Namespace) -> int:
    config = RunConfig(
        input=Path(args.input),
        out=Path(args.out),
        settings=settings_from_args(args),
        snapshot_every=args.snapshot_every,
        debug_dumps=args.debug_dumps,
    )
    cubes = list_cubes(config.input)
    if not cubes:
        print(f"No cube headers found in {config.input}", file=sys.stderr)
        return 1
    debug_log("[cli cmd_run] %d cube(s), variant %s, seed %d" % (len(cubes), config.variant, config.seed))
    outcome = run_cubes(cubes, config.settings, config.out, config.snapshot_every, config.debug_dumps)
    print(f"Processed {outcome['processed']}/{len(cubes)} cube(s) -> {config.out}")
    return 0 if outcome["success"] else 1


def _write_eval_outputs(outcome: dict, out_csv: Path, settings: dict) -> None:
    provenance = provenance_items(settings)
    write_report_csv(outcome["rows"], out_csv, provenance)
    write_pr_csv(mean_pr_curve(outcome["curves"]), out_csv.with_name(f"{out_csv.stem}_pr.csv"), provenance)


def cmd_eval(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    pred_dir, gt_dir = Path(args.input), Path(args.gt)
    out_csv = Path(args.out) if args.out else pred_dir / "metrics.csv"
    outcome = evaluate_dirs(pred_dir, gt_dir, settings)
    if outcome["unmatched"]:
        print(f"Unmatched stems: {', '.join(outcome['unmatched'])}", file=sys.stderr)
    for error in outcome["errors"]:
        print(f"Failed: {error}", file=sys.stderr)
    if not outcome["rows"]:
        print(f"No prediction/mask pairs to evaluate between {pred_dir} and {gt_dir}", file=sys.stderr)
        return 1
    _write_eval_outputs(outcome, out_csv, settings)
    print(f"Evaluated {len(outcome['rows'])} image(s) -> {out_csv}")
    return 0 if not outcome["errors"] else 1


def rank_table(means: dict[str, MetricReport]) -> pd.DataFrame:
    """Per metric, each variant's mean value with a `[1]`..`[3]` marker for the best three."""
    metrics = REPORT_COLUMNS[1:]
    table = {variant: {} for variant in means}
    for metric in metrics:
        values = [(getattr(report, metric), variant) for variant, report in means.items()]
        order = sorted(range(len(values)), key=lambda i: values[i][0], reverse=metric not in ASCENDING_METRICS)
        places = {values[i][1]: place for place, i in enumerate(order, start=1)}
        for value, variant in values:
            marker = f" [{places[variant]}]" if places[variant] <= 3 else ""
            table[variant][metric] = f"{value:.4f}{marker}"
    return pd.DataFrame(table, index=metrics)


def cmd_bench(args: argparse.Namespace) -> int:
    settings = settings_from_args(args, skip=("variant",))
    variants = args.variant or list(VARIANTS)
    for variant in variants:
        if variant not in VARIANTS:
            raise ConfigError(f"Unknown variant: {variant} (choose from {', '.join(VARIANTS)})")
    dataset, out_dir = Path(args.input), Path(args.out)
    cubes_dir, masks_dir = dataset / "cubes", dataset / "masks"
    if not cubes_dir.is_dir() or not masks_dir.is_dir():
        print(f"Dataset {dataset} must contain cubes/ and masks/", file=sys.stderr)
        return 1
    cubes = list_cubes(cubes_dir)

    report_rows, convergence_rows, timing_rows, means = [], [], [], {}
    failed = False
    for variant in variants:
        variant_settings = {**settings, "variant": variant}
        variant_dir = out_dir / variant
        start = time.perf_counter()
        run = run_cubes(cubes, variant_settings, variant_dir)
        elapsed = time.perf_counter() - start
        failed |= not run["success"]

        outcome = evaluate_dirs(variant_dir, masks_dir, variant_settings)
        failed |= bool(outcome["errors"])
        for error in outcome["errors"]:
            print(f"Failed: {error}", file=sys.stderr)
        if not outcome["rows"]:
            failed = True
            continue
        _write_eval_outputs(outcome, variant_dir / "metrics.csv", variant_settings)
        means[variant] = aggregate([r for _, r in outcome["rows"]])

        entries = {e["stem"]: e for e in run["store"].get_all_results()}
        for stem, report in outcome["rows"]:
            entry = entries.get(stem, {})
            report_rows.append({"variant": variant, "image": stem, **asdict(report),
                                "iterations": entry.get("iterations", 0), "cause": entry.get("cause", "")})
        causes = [entries[s].get("cause", "") for s, _ in outcome["rows"] if s in entries]
        iterations = [entries[s].get("iterations", 0) for s, _ in outcome["rows"] if s in entries]
        convergence_rows.append({"variant": variant, "mean_iterations": float(np.mean(iterations)) if iterations else 0.0,
                                 **{cause.value: causes.count(cause.value) for cause in TerminationCause}})
        timing_rows.append({"variant": variant, "images": len(cubes), "seconds": elapsed})

    out_dir.mkdir(parents=True, exist_ok=True)
    report_columns = ["variant", *REPORT_COLUMNS, "iterations", "cause"]
    pd.DataFrame(report_rows, columns=report_columns).to_csv(out_dir / "bench_report.csv", index=False,
                                                              float_format="%.17g", lineterminator="\n")
    pd.DataFrame(convergence_rows).to_csv(out_dir / "bench_convergence.csv", index=False,
                                          float_format="%.17g", lineterminator="\n")
    pd.DataFrame(timing_rows).to_csv(out_dir / "bench_timing.csv", index=False, lineterminator="\n")
    if means:
        (out_dir / "ranking.txt").write_text(rank_table(means).to_string() + "\n", encoding="utf-8")
    print(f"Benchmarked {len(variants)} variant(s) on {len(cubes)} cube(s) -> {out_dir}")
    return 1 if failed else 0


def cmd_synth(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    for i in range(args.count):
        cube, mask = make_scene(args.size, args.bands, args.seed + i, args.noise)
        write_scene(out_dir, f"scene_{i:03d}", cube, mask)
    print(f"Wrote {args.count} synthetic scene(s) -> {out_dir}")
    return 0


# ─── Parser ──────────────────────────────────────────────────────────────────

def _add_setting_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="Plain-text `key = value` config file.")
    parser.add_argument("--seed", type=int, help="Seed for network init and AUC sampling.")
    parser.add_argument("--workers", type=int, help="Images processed in parallel (default: 1).")
    parser.add_argument("--kappa", type=int, help="Maximum self-supervision iterations (default: 200).")
    parser.add_argument("--eps1", type=float, help="Loss-change tolerance.")
    parser.add_argument("--eps2", type=float, help="Saliency-change tolerance.")
    parser.add_argument("--segments", type=int, help="Target superpixel count (default: 600).")
    parser.add_argument("--alpha", type=float, help="Manifold ranking alpha (default: 0.99).")
    parser.add_argument("--sigma-sq", type=float, help="Affinity bandwidth sigma^2 (default: 0.1).")
    parser.add_argument("--context-margin", type=int, help="Mirrored border around the network input (default: 12).")
    parser.add_argument("--recompute-superpixels-every", type=int,
                        help="Recompute feature superpixels every N iterations (default: 1).")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sudf", description="Hyperspectral salient object detection.")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("run", help="Compute saliency maps for a cube or a directory of cubes.")
    run.add_argument("--input", type=Path, required=True, help="ENVI header file or directory of headers.")
    run.add_argument("--out", type=Path, default=DEFAULT_OUTPUT_DIR, help="Output directory.")
    run.add_argument("--variant", choices=VARIANTS, help="Pipeline variant (default: hf-slic).")
    run.add_argument("--snapshot-every", type=int, default=0, help="Save label/saliency snapshots every N iterations.")
    run.add_argument("--debug-dumps", action="store_true", help="Write overlays, graph and checkpoint under debug/.")
    _add_setting_flags(run)
    run.set_defaults(func=cmd_run)

    ev = subparsers.add_parser("eval", help="Evaluate saliency PNGs against ground-truth masks.")
    ev.add_argument("--input", type=Path, required=True, help="Directory of predicted saliency PNGs.")
    ev.add_argument("--gt", type=Path, required=True, help="Directory of ground-truth mask PNGs.")
    ev.add_argument("--out", type=Path, help="Report CSV (default: <input>/metrics.csv).")
    _add_setting_flags(ev)
    ev.set_defaults(func=cmd_eval)

    bench = subparsers.add_parser("bench", help="Run and evaluate several variants on a dataset.")
    bench.add_argument("--input", type=Path, required=True, help="Dataset directory with cubes/ and masks/.")
    bench.add_argument("--out", type=Path, default=DEFAULT_OUTPUT_DIR, help="Output directory.")
    bench.add_argument("--variant", action="append", choices=VARIANTS, help="Variant to include (repeatable; default: all).")
    _add_setting_flags(bench)
    bench.set_defaults(func=cmd_bench)

    synth = subparsers.add_parser("synth", help="Write synthetic two-material scenes with masks.")
    synth.add_argument("--out", type=Path, required=True, help="Dataset directory to create.")
    synth.add_argument("--count", type=int, default=1, help="Number of scenes (default: 1).")
    synth.add_argument("--size", type=int, default=DEFAULT_SIZE, help=f"Scene side in pixels (default: {DEFAULT_SIZE}).")
    synth.add_argument("--bands", type=int, default=DEFAULT_BANDS, help=f"Spectral bands (default: {DEFAULT_BANDS}).")
    synth.add_argument("--seed", type=int, default=0, help="Seed of the first scene; scene i uses seed + i.")
    synth.add_argument("--noise", type=float, default=DEFAULT_NOISE, help=f"Noise sigma (default: {DEFAULT_NOISE}).")
    synth.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
