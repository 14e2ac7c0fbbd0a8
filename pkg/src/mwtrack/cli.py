"""Command-line interface: tracking runs, evaluation, identification, benchmarks.

Runs are driven by a flat key-value config file (``key = value`` lines,
``#`` comments). Unknown keys are rejected; every key has a default, so
an empty file is valid and the default set documents the reference
constants. Exit codes: 0 ok, 1 input error, 2 numerical failure,
3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evaluate, identify, linalg, tracker
from .features import BoundingBox, extract_patch, load_frame
from .metric import PAConfig, StructuredConfig, Triplet, pa_update
from .reservoir import FOREGROUND, SampleBuffer, SamplerConfig

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3

# key -> (default, parser, help)
CONFIG_KEYS = {
    "input_dir": ("", str, "directory of numbered .pgm/.png frames"),
    "init_x": ("0", float, "initial box: left edge (pixels)"),
    "init_y": ("0", float, "initial box: top edge (pixels)"),
    "init_w": ("0", float, "initial box: width (pixels)"),
    "init_h": ("0", float, "initial box: height (pixels)"),
    "output_trajectory": ("trajectory.csv", str, "trajectory CSV path"),
    "output_diagnostics": ("diagnostics.json", str, "diagnostics JSON path"),
    "output_identities": ("identities.csv", str, "per-frame identification CSV"),
    "seed": ("0", int, "RNG seed for the whole run"),
    "n_particles": ("200", int, "particle count"),
    "sigma_x": ("10", float, "transition stddev, x translation (pixels)"),
    "sigma_y": ("10", float, "transition stddev, y translation (pixels)"),
    "sigma_s": ("0.1", float, "transition stddev, scale"),
    "gamma_f": ("1", float, "foreground residual scaling factor"),
    "gamma_b": ("1", float, "background residual scaling factor"),
    "rho": ("0.1", float, "background trade-off factor in the score"),
    "buffer_capacity": ("300", int, "reservoir buffer capacity per class"),
    "q_factor": ("1.6", float, "time-weight base for reservoir keys (>= 1)"),
    "pa_c": ("1", float, "passive-aggressive step cap C"),
    "triplets_per_frame": ("500", int, "triplets drawn per frame"),
    "feature_mode": ("hog405", str, "feature extractor: hog405 | raw_pixels"),
    "structured_enabled": ("false", None, "run structured metric rounds"),
    "structured_c": ("1", float, "structured step-length budget C"),
    "structured_max_iterations": ("5", int, "structured cutting-plane rounds"),
    "structured_candidates": ("16", int, "candidate boxes per structured round"),
    "occlusion_factor": ("3", float, "occlusion threshold over median residual"),
    "occlusion_window": ("30", int, "rolling residual window for occlusion"),
}

_BOOL_VALUES = {"true": True, "false": False, "1": True, "0": False}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Parsed run configuration (all CONFIG_KEYS as attributes)."""

    values: dict

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key)

    def tracker_config(self) -> tracker.TrackerConfig:
        structured = None
        if self.values["structured_enabled"]:
            structured = StructuredConfig(
                c_bound=self.values["structured_c"],
                max_iterations=self.values["structured_max_iterations"],
                n_candidate_boxes=self.values["structured_candidates"],
            )
        return tracker.TrackerConfig(
            n_particles=self.values["n_particles"],
            sigma=(
                self.values["sigma_x"],
                self.values["sigma_y"],
                self.values["sigma_s"],
            ),
            gamma_f=self.values["gamma_f"],
            gamma_b=self.values["gamma_b"],
            rho=self.values["rho"],
            sampler=SamplerConfig(
                capacity=self.values["buffer_capacity"],
                q_factor=self.values["q_factor"],
            ),
            pa=PAConfig(c_bound=self.values["pa_c"]),
            structured=structured,
            triplets_per_frame=self.values["triplets_per_frame"],
            feature_mode=self.values["feature_mode"],
            rng_seed=self.values["seed"],
        )

    def init_box(self) -> BoundingBox:
        return BoundingBox(
            self.values["init_x"],
            self.values["init_y"],
            self.values["init_w"],
            self.values["init_h"],
        )


def _parse_value(key: str, raw: str):
    default, parser, _ = CONFIG_KEYS[key]
    if parser is None:  # boolean
        try:
            return _BOOL_VALUES[raw.strip().lower()]
        except KeyError:
            raise ConfigError(f"config key '{key}': expected true/false, got {raw!r}")
    try:
        return parser(raw.strip())
    except ValueError:
        raise ConfigError(f"config key '{key}': cannot parse {raw!r}")


def load_config(path, seed_override: int | None = None) -> RunConfig:
    """Parse a flat key-value config, rejecting unknown keys."""
    values = {key: _parse_value(key, default) for key, (default, _, _) in CONFIG_KEYS.items()}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        values[key] = _parse_value(key, raw)
    if seed_override is not None:
        values["seed"] = seed_override
    return RunConfig(values=values)


def default_config_text() -> str:
    """Commented default config; doubles as key documentation."""
    lines = ["# mwtrack run configuration (defaults shown)"]
    for key, (default, _, help_text) in CONFIG_KEYS.items():
        lines.append(f"{key} = {default}  # {help_text}")
    return "\n".join(lines) + "\n"


_STEM_RE = re.compile(r"(\d+)")


def discover_frames(directory) -> list[tuple[int, Path]]:
    """Numbered .pgm/.png frames, sorted; gaps in numbering are errors."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"input_dir {directory} is not a directory")
    frames = []
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() not in (".pgm", ".png"):
            continue
        match = _STEM_RE.search(path.stem)
        if match is None:
            raise ConfigError(f"frame {path.name} has no numeric stem")
        frames.append((int(match.group(1)), path))
    if not frames:
        raise ConfigError(f"no .pgm/.png frames found in {directory}")
    frames.sort()
    first = frames[0][0]
    for offset, (number, _) in enumerate(frames):
        if number != first + offset:
            raise ConfigError(
                f"missing frame {first + offset} "
                f"(directory jumps from {frames[offset - 1][0]} to {number})"
            )
    return frames


def _run_tracking(config: RunConfig):
    """Shared track loop: returns (boxes per frame, model, states)."""
    frames = discover_frames(config.input_dir)
    cfg = config.tracker_config()
    first_number, first_path = frames[0]
    frame = load_frame(first_path)
    model = tracker.init(frame, config.init_box(), cfg)
    boxes = {first_number: config.init_box()}
    for number, path in frames[1:]:
        state = tracker.step(model, load_frame(path), cfg)
        boxes[number] = tracker.state_to_box(state, model.init_box)
    return boxes, model, frames


def cmd_track(args) -> int:
    config = load_config(args.config, seed_override=args.seed)
    boxes, model, _ = _run_tracking(config)
    evaluate.save_boxes_csv(config.output_trajectory, boxes)
    with open(config.output_diagnostics, "w") as fh:
        json.dump(
            {"frames": len(boxes), "per_frame": model.diagnostics},
            fh,
            indent=2,
        )
    print(f"tracked {len(boxes)} frames -> {config.output_trajectory}")
    return EXIT_OK


def cmd_eval(args) -> int:
    preds = evaluate.load_boxes_csv(args.trajectory)
    gt = evaluate.load_boxes_csv(args.ground_truth)
    report = evaluate.summarize(preds, gt)
    payload = report.to_dict()
    with open(args.output, "w") as fh:
        json.dump(payload, fh, indent=2)
    if args.per_frame:
        evaluate.save_per_frame_csv(args.per_frame, report)
    for key, value in payload.items():
        print(f"{key}: {value:.4f}" if isinstance(value, float) else f"{key}: {value}")
    return EXIT_OK


def _load_template_classes(templates_dir, feature_fn) -> list[identify.TemplateClass]:
    templates_dir = Path(templates_dir)
    if not templates_dir.is_dir():
        raise ConfigError(f"templates dir {templates_dir} is not a directory")
    classes = []
    for class_dir in sorted(p for p in templates_dir.iterdir() if p.is_dir()):
        feats = []
        for path in sorted(class_dir.iterdir()):
            if path.suffix.lower() not in (".pgm", ".png"):
                continue
            patch = load_frame(path)
            if patch.shape != (32, 32):
                raise ConfigError(
                    f"template {path} must be a 32x32 patch image"
                )
            feats.append(feature_fn(patch))
        if not feats:
            raise ConfigError(f"class directory {class_dir} has no patch images")
        classes.append(
            identify.TemplateClass(class_dir.name, np.column_stack(feats))
        )
    if not classes:
        raise ConfigError(f"no class directories under {templates_dir}")
    return classes


def cmd_identify(args) -> int:
    config = load_config(args.config, seed_override=args.seed)
    cfg = config.tracker_config()
    classes = _load_template_classes(args.templates, cfg.feature_fn())
    class_ids = tuple(c.class_id for c in classes)

    frames = discover_frames(config.input_dir)
    first_number, first_path = frames[0]
    model = tracker.init(load_frame(first_path), config.init_box(), cfg)

    ledger = identify.IdentityLedger(class_ids=class_ids)
    history: list[float] = []
    rows = []
    featurize = cfg.feature_fn()
    for number, path in frames[1:]:
        frame = load_frame(path)
        state = tracker.step(model, frame, cfg)
        box = tracker.state_to_box(state, model.init_box)
        feature = featurize(extract_patch(frame, box))
        residuals = np.array(
            [identify.class_residual(model.metric, c, feature) for c in classes]
        )
        frame_score = model.diagnostics[-1]["map_score"]
        ledger = identify.accumulate(ledger, residuals, frame_score)
        best = float(residuals.min())
        occluded = identify.detect_occlusion(
            best,
            history,
            factor=config.occlusion_factor,
        )
        history.append(best)
        if len(history) > config.occlusion_window:
            history.pop(0)
        rows.append((number, identify.classify(ledger), best, occluded))

    with open(config.output_identities, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "class", "residual_best", "occluded"])
        for number, label, best, occluded in rows:
            writer.writerow([number, label, f"{best:.6f}", int(occluded)])
    final = identify.classify(ledger)
    print(f"final identity: {final}")
    return EXIT_OK


def _bench_sampling(writer) -> None:
    writer.writerow(["q", "decile", "inclusion_frequency"])
    n, capacity, trials = 100, 10, 2000
    for q in (1.0, 1.2, 1.6):
        rng = np.random.default_rng(7)
        cfg = SamplerConfig(capacity=capacity, q_factor=q)
        counts = np.zeros(n)
        for _ in range(trials):
            buf = SampleBuffer(capacity, FOREGROUND)
            empty = np.zeros(1)
            for i in range(n):
                buf.insert(empty, i, cfg, rng)
            for entry in buf.entries:
                counts[entry.frame_index] += 1
        freq = counts / trials
        for decile in range(10):
            chunk = freq[decile * 10 : (decile + 1) * 10]
            writer.writerow([q, decile, f"{chunk.mean():.5f}"])


def _bench_inverse(writer) -> None:
    writer.writerow(["n_cols", "incremental_ns", "dense_ns", "speedup"])
    rng = np.random.default_rng(3)
    d = 405
    metric = np.eye(d)
    for n in (50, 100, 200, 300):
        basis = rng.standard_normal((d, n))
        cache = linalg.build_cache(basis, metric, capacity=n + 1)
        col = rng.standard_normal(d)
        reps = 50
        start = time.perf_counter()
        for _ in range(reps):
            linalg.incremental_inverse(cache, metric, col)
        inc_ns = (time.perf_counter() - start) / reps * 1e9
        expanded = np.concatenate([basis, col[:, None]], axis=1)
        start = time.perf_counter()
        for _ in range(reps):
            linalg.build_cache(expanded, metric)
        dense_ns = (time.perf_counter() - start) / reps * 1e9
        writer.writerow(
            [n, f"{inc_ns:.0f}", f"{dense_ns:.0f}", f"{dense_ns / inc_ns:.2f}"]
        )


def _bench_metric(writer) -> None:
    writer.writerow(["d", "updates_per_second"])
    rng = np.random.default_rng(11)
    for d in (64, 405):
        metric = np.eye(d)
        cfg = PAConfig(c_bound=1.0)
        triplets = [
            Triplet(
                rng.standard_normal(d),
                rng.standard_normal(d),
                rng.standard_normal(d),
            )
            for _ in range(200)
        ]
        start = time.perf_counter()
        for t in triplets:
            metric, _ = pa_update(metric, t, cfg)
        elapsed = time.perf_counter() - start
        writer.writerow([d, f"{len(triplets) / elapsed:.0f}"])


def cmd_bench(args) -> int:
    targets = {
        "sampling": _bench_sampling,
        "inverse": _bench_inverse,
        "metric": _bench_metric,
    }
    if args.what not in targets:
        print(
            f"unknown benchmark target {args.what!r}; "
            f"choose from {sorted(targets)}",
            file=sys.stderr,
        )
        return EXIT_INPUT
    output = args.output or f"bench_{args.what}.csv"
    with open(output, "w", newline="") as fh:
        targets[args.what](csv.writer(fh))
    print(Path(output).read_text(), end="")
    print(f"benchmark written to {output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mwtrack",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="Config keys (key = value per line):\n" + default_config_text(),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_track = sub.add_parser("track", help="run the tracker over a frame directory")
    p_track.add_argument("config", help="run config file")
    p_track.add_argument("--seed", type=int, default=None, help="override config seed")
    p_track.set_defaults(func=cmd_track)

    p_eval = sub.add_parser("eval", help="score a trajectory against ground truth")
    p_eval.add_argument("trajectory", help="predicted trajectory CSV")
    p_eval.add_argument("ground_truth", help="ground-truth CSV")
    p_eval.add_argument("--output", default="report.json", help="report JSON path")
    p_eval.add_argument("--per-frame", default=None, help="optional per-frame CSV")
    p_eval.set_defaults(func=cmd_eval)

    p_id = sub.add_parser("identify", help="track and identify against templates")
    p_id.add_argument("config", help="run config file")
    p_id.add_argument("templates", help="directory of per-class template patches")
    p_id.add_argument("--seed", type=int, default=None, help="override config seed")
    p_id.set_defaults(func=cmd_identify)

    p_bench = sub.add_parser("bench", help="micro-benchmarks (CSV output)")
    p_bench.add_argument("what", help="sampling | inverse | metric")
    p_bench.add_argument("--output", default=None, help="CSV output path")
    p_bench.add_argument("--seed", type=int, default=None, help="unused; accepted for symmetry")
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (linalg.SingularUpdateError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
