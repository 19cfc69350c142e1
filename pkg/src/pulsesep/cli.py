"""Command-line interface: train, infer, eval, baseline, synth.

Every command validates its full configuration before touching the
filesystem, writes outputs atomically (temp file + rename), and is
deterministic for a fixed seed: identical invocations produce identical
bytes. All outputs are plot-ready CSV files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import AutodiffError, Tensor
from .baselines import (
    BaselineError,
    best_component,
    fastica,
    nmf,
    orient_components,
    pseudo_copies,
)
from .hr import (
    HRError,
    METRICS_CSV_HEADER,
    bland_altman_pairs,
    detect_ppg_beats,
    detect_r_peaks,
    detect_source_beats,
    median_smooth,
    metrics_csv_line,
    orient_positive_skew,
    paired_hr_arrays,
    score_beats,
)
from .losses import LossConfig, LossError
from .model import (
    MEAEConfig,
    ModelError,
    infer_source,
    init_params,
    load_checkpoint,
)
from .preprocessing import (
    PAD_SAMPLES,
    PipelineError,
    Recording,
    TARGET_FS,
    load_recording,
    preprocess_recording,
    resample,
    save_csv,
)
from .synthetic import (
    SceneConfig,
    SyntheticError,
    generate_scene,
    make_validation_fn,
    parse_scene_config,
    scene_recordings,
    write_scene_config,
)
from .training import TrainConfig, TrainingError, train

_ERRORS = (AutodiffError, BaselineError, HRError, LossError, ModelError,
           PipelineError, SyntheticError, TrainingError)


class CLIError(Exception):
    pass


@dataclass
class RunConfig:
    model: MEAEConfig
    loss: LossConfig
    train: TrainConfig


def _build_section(cls, data: dict, section: str):
    if "encoder_channels" in data:
        data = dict(data, encoder_channels=tuple(data["encoder_channels"]))
    try:
        return cls(**data)
    except TypeError as err:
        raise CLIError(f"invalid {section!r} config: {err}") from None


def load_run_config(path: str | None, overrides: dict) -> RunConfig:
    """Merge defaults, config file sections, and flag overrides, validating
    everything before any computation starts."""
    sections = {"model": {}, "loss": {}, "train": {}}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise CLIError(f"config file not found: {p}")
        try:
            loaded = json.loads(p.read_text())
        except json.JSONDecodeError as err:
            raise CLIError(f"config file {p} is not valid JSON: {err}") from None
        unknown = set(loaded) - set(sections)
        if unknown:
            raise CLIError(f"config file {p} has unknown sections {unknown}")
        for key in sections:
            sections[key].update(loaded.get(key, {}))
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "seed":
            sections["model"]["seed"] = value
            sections["train"]["seed"] = value
        elif key == "encoders":
            sections["model"]["num_encoders"] = value
        else:
            sections["train"][key] = value
    return RunConfig(
        model=_build_section(MEAEConfig, sections["model"], "model"),
        loss=_build_section(LossConfig, sections["loss"], "loss"),
        train=_build_section(TrainConfig, sections["train"], "train"),
    )


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_recording_csv(rec: Recording, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    save_csv(rec, tmp)
    os.replace(tmp, path)


def _echo_config(run: RunConfig, out_dir: Path) -> None:
    payload = {
        "model": dataclasses.asdict(run.model),
        "loss": dataclasses.asdict(run.loss),
        "train": dataclasses.asdict(run.train),
    }
    payload["model"]["encoder_channels"] = list(
        payload["model"]["encoder_channels"])
    _atomic_write_text(out_dir / "config.json",
                       json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_at_target_fs(path: str) -> Recording:
    rec = load_recording(path)
    return resample(rec, TARGET_FS) if rec.fs != TARGET_FS else rec


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    run = load_run_config(args.config, {
        "seed": args.seed, "epochs": args.epochs,
        "batch_size": args.batch_size, "learning_rate": args.learning_rate,
        "eval_every": args.eval_every, "encoders": args.encoders,
    })
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise CLIError(f"data directory not found: {data_dir}")
    paths = sorted(data_dir.glob("*.csv")) + sorted(data_dir.glob("*.sig"))
    if not paths:
        raise CLIError(f"no recordings (*.csv, *.sig) in {data_dir}")

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        recordings = list(pool.map(load_recording, paths))
        all_segments = list(pool.map(preprocess_recording, recordings))
    segments = [seg for per_rec in all_segments for seg in per_rec]
    if not segments:
        raise CLIError(
            f"no valid segments in {data_dir}: recordings shorter than one "
            "window or entirely flat"
        )

    validate_fn = None
    if args.val_scenes:
        scene_dir = Path(args.val_scenes)
        scene_paths = sorted(scene_dir.glob("*.cfg"))
        if not scene_paths:
            raise CLIError(f"no scene configs (*.cfg) in {scene_dir}")
        scenes = [generate_scene(parse_scene_config(p)) for p in scene_paths]
        validate_fn = make_validation_fn(scenes, run.model)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(run, out_dir)
    train_cfg = dataclasses.replace(run.train,
                                    checkpoint_dir=str(out_dir / "checkpoints"))
    params = init_params(run.model)
    train(params, run.model, segments, train_cfg, run.loss,
          validate_fn=validate_fn, log_path=str(out_dir / "epoch_log.csv"))
    return 0


# ---------------------------------------------------------------------------
# infer


def cmd_infer(args) -> int:
    params, config = load_checkpoint(args.checkpoint)
    if args.encoder == "all":
        encoders = list(range(config.num_encoders))
    else:
        try:
            idx = int(args.encoder)
        except ValueError:
            raise CLIError(
                f"--encoder must be an index or 'all', got {args.encoder!r}"
            ) from None
        if not 0 <= idx < config.num_encoders:
            raise CLIError(
                f"encoder index {idx} out of range; valid: "
                f"0..{config.num_encoders - 1} or 'all'"
            )
        encoders = [idx]

    rec = _load_at_target_fs(args.recording)
    segments = preprocess_recording(rec)
    if not segments:
        raise CLIError(
            f"recording {args.recording} yields no valid 48 s segments"
        )
    x = np.stack([s.data for s in segments])[:, None, :]

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    batch = 16
    for enc in encoders:
        chunks = []
        for lo in range(0, x.shape[0], batch):
            est = infer_source(params, config, Tensor(x[lo:lo + batch]), enc)
            chunks.append(est.data[:, 0, PAD_SAMPLES:-PAD_SAMPLES])
        trace = np.concatenate(chunks, axis=0).reshape(-1)
        out_rec = Recording(trace, TARGET_FS,
                            record_id=f"source_{enc}")
        _write_recording_csv(out_rec, out_dir / f"source_{enc}.csv")
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    ppg_path = Path(args.ppg).resolve()
    ecg_path = Path(args.ecg).resolve()
    if ppg_path == ecg_path:
        raise CLIError(
            "--ppg and --ecg name the same file; the PPG cannot serve as "
            "its own ECG reference"
        )
    ecg = _load_at_target_fs(args.ecg)
    r_peaks = detect_r_peaks(ecg)
    if r_peaks.size < 4:
        raise CLIError(
            f"ECG {args.ecg} too short or too flat for R-peak detection "
            f"({r_peaks.size} beats found)"
        )

    def detect_oriented(rec, peaks):
        # separated sources carry arbitrary polarity
        return detect_source_beats(orient_positive_skew(rec.samples), peaks)

    jobs = [("ppg", Path(args.ppg), -1, detect_ppg_beats)]
    for i, src in enumerate(args.source or []):
        jobs.append(("source", Path(src), i, detect_oriented))

    def evaluate(job):
        method, path, encoder, detector = job
        rec = _load_at_target_fs(str(path))
        beats = detector(rec, r_peaks)
        metrics = score_beats(r_peaks, beats, TARGET_FS, args.smooth_window)
        ref_hr, test_hr = paired_hr_arrays(r_peaks, beats, TARGET_FS)
        ref_hr = median_smooth(ref_hr, args.smooth_window)
        test_hr = median_smooth(test_hr, args.smooth_window)
        return method, path, encoder, metrics, ref_hr, test_hr

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(evaluate, jobs))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [METRICS_CSV_HEADER]
    for method, path, encoder, metrics, ref_hr, test_hr in results:
        lines.append(metrics_csv_line(path.stem, method, encoder, metrics))
        mean_hr, diff_hr = bland_altman_pairs(ref_hr, test_hr)
        ba = ["mean_hr,hr_difference"]
        ba += [f"{m!r},{d!r}" for m, d in zip(mean_hr, diff_hr)]
        _atomic_write_text(out_dir / f"bland_altman_{path.stem}.csv",
                           "\n".join(ba) + "\n")
    _atomic_write_text(out_dir / "metrics.csv", "\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# baseline


def cmd_baseline(args) -> int:
    ppg_path = Path(args.ppg).resolve()
    ecg_path = Path(args.ecg).resolve()
    if ppg_path == ecg_path:
        raise CLIError("--ppg and --ecg name the same file")
    ppg = _load_at_target_fs(args.ppg)
    ecg = _load_at_target_fs(args.ecg)
    r_peaks = detect_r_peaks(ecg)
    if r_peaks.size < 4:
        raise CLIError(f"ECG {args.ecg} unusable for R-peak detection")

    copies = pseudo_copies(ppg.samples, n=args.components)
    try:
        if args.method == "ica":
            components = orient_components(
                fastica(copies, seed=args.seed or 0).components)
        else:
            shifted = copies - copies.min()
            result = nmf(shifted, rank=args.components, seed=args.seed or 0)
            components = result.h
        idx, metrics = best_component(components, r_peaks, TARGET_FS,
                                      args.smooth_window)
    except _ERRORS as err:
        raise CLIError(f"{args.method} baseline failed: {err}") from err

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [METRICS_CSV_HEADER,
             metrics_csv_line(Path(args.ppg).stem, args.method, idx, metrics)]
    _atomic_write_text(out_dir / "metrics.csv", "\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    cfg = parse_scene_config(args.scene) if args.scene else SceneConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    scene = generate_scene(cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, rec in scene_recordings(scene).items():
        _write_recording_csv(rec, out_dir / f"{name}.csv")
    beats = "\n".join(str(int(b)) for b in scene.ground_truth_beats) + "\n"
    _atomic_write_text(out_dir / "beats.txt", beats)
    write_scene_config(cfg, out_dir / "scene.cfg")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulsesep",
        description="Self-supervised source separation for single-channel "
                    "quasi-periodic signals.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="override every configured seed")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel workers for independent recordings")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="preprocess recordings and train")
    p.add_argument("--config", default=None, help="JSON run configuration")
    p.add_argument("--data", required=True, help="directory of recordings")
    p.add_argument("--val-scenes", default=None,
                   help="directory of scene .cfg files for per-epoch HR RMSE")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--encoders", type=int, default=None)
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="mask-and-decode source estimates")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--recording", required=True)
    p.add_argument("--encoder", default="all",
                   help="encoder index or 'all' (default)")
    common(p)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="HR metrics against an ECG reference")
    p.add_argument("--ppg", required=True)
    p.add_argument("--ecg", required=True)
    p.add_argument("--source", action="append", default=[],
                   help="source-estimate CSV (repeatable)")
    p.add_argument("--smooth-window", type=int, default=5)
    common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("baseline", help="classical BSS over pseudo-copies")
    p.add_argument("--method", required=True, choices=("ica", "nmf"))
    p.add_argument("--ppg", required=True)
    p.add_argument("--ecg", required=True)
    p.add_argument("--components", type=int, default=8)
    p.add_argument("--smooth-window", type=int, default=5)
    common(p)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--scene", default=None, help="scene config file")
    common(p)
    p.set_defaults(fn=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CLIError, *_ERRORS) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
