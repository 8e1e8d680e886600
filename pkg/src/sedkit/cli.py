"""Command-line surface: synth | featurize | train | predict | eval |
sweep | ensemble-predict, driven by a config file.

Every subcommand validates its inputs before touching any output path.
Exit codes: 0 success, 2 configuration error, 3 missing/unreadable path,
4 checkpoint/model mismatch, 1 anything else.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config
from .decoding import binarize, frames_to_events, median_filter_grid
from .evaluation import evaluate_corpus, format_report, write_report_csv
from .events import read_events_tsv, write_events_tsv
from .features import load_features, log_mel, read_wav, save_features
from .model import CRNN, PosteriorGrid
from .synth import generate_dataset
from .training import ConfigError, Trainer, load_training_data

SPLITS = ("weak", "strong", "unlabeled", "test")


class PathError(RuntimeError):
    """A referenced input path is missing or unreadable."""


class CheckpointMismatch(RuntimeError):
    """Checkpoint contents do not fit the configured model."""


def ensemble_average(grids):
    """Elementwise mean of posterior grids; the members must agree on
    shape."""
    if not grids:
        raise ValueError("ensemble_average: need at least one grid")
    first = grids[0]
    for g in grids[1:]:
        if g.frame_probs.shape != first.frame_probs.shape or g.clip_probs.shape != first.clip_probs.shape:
            raise ValueError(
                f"ensemble_average: member shapes differ "
                f"({g.frame_probs.shape} vs {first.frame_probs.shape})"
            )
    n = len(grids)
    return PosteriorGrid(
        frame_probs=sum(g.frame_probs for g in grids) / n,
        clip_probs=sum(g.clip_probs for g in grids) / n,
        frame_duration_seconds=first.frame_duration_seconds,
    )


def _require(path, what):
    if not Path(path).exists():
        raise PathError(f"{what} not found: {path}")
    return Path(path)


def _load_model(ckpt_path, model_config):
    _require(ckpt_path, "checkpoint")
    try:
        return CRNN.load(ckpt_path, model_config)
    except ValueError as e:
        raise CheckpointMismatch(f"{ckpt_path}: {e}") from e


# -- subcommands ------------------------------------------------------------


def cmd_synth(cfg):
    generate_dataset(
        cfg.data_dir,
        n_weak=cfg.synth["n_weak"],
        n_strong=cfg.synth["n_strong"],
        n_unlabeled=cfg.synth["n_unlabeled"],
        n_test=cfg.synth["n_test"],
        seed=cfg.seed,
        noise_floor_db=cfg.synth["noise_floor_db"],
    )
    total = sum(cfg.synth[k] for k in ("n_weak", "n_strong", "n_unlabeled", "n_test"))
    print(f"synth: wrote {total} clips to {cfg.data_dir}")
    return 0


def cmd_featurize(cfg):
    _require(cfg.data_dir, "data directory")
    split_dirs = [cfg.data_dir / s for s in SPLITS if (cfg.data_dir / s).is_dir()]
    if not split_dirs:
        raise PathError(f"no split directories under {cfg.data_dir}")
    count = 0
    for split_dir in split_dirs:
        out_dir = cfg.features_dir / split_dir.name
        out_dir.mkdir(parents=True, exist_ok=True)
        for wav in sorted(split_dir.glob("*.wav")):
            save_features(out_dir / f"{wav.stem}.feat", log_mel(read_wav(wav)))
            count += 1
    print(f"featurize: wrote {count} feature files to {cfg.features_dir}")
    return 0


def cmd_train(cfg):
    _require(cfg.features_dir, "features directory")
    for name in ("weak.tsv", "strong.tsv"):
        _require(cfg.data_dir / name, "label file")
    data = load_training_data(
        cfg.features_dir,
        cfg.data_dir,
        cfg.classes,
        time_pool=cfg.model.time_pool,
        n_hop_frames=cfg.model.n_frames,
    )
    trainer = Trainer(cfg.model, data, cfg.trainer, log_path=cfg.checkpoints_dir / "train_log.csv")
    cfg.checkpoints_dir.mkdir(parents=True, exist_ok=True)

    def progress(epoch, bundle):
        print(
            f"epoch {epoch + 1}/{cfg.trainer.epochs}: total {bundle.total:.4f} "
            f"(L_w {bundle.l_w:.4f}, L_s {bundle.l_s:.4f}, w_t {bundle.w_t:.3f})",
            flush=True,
        )

    trainer.train(checkpoint_dir=cfg.checkpoints_dir, progress=progress)
    print(f"train: checkpoints and log in {cfg.checkpoints_dir}")
    return 0


def _predict_grids(cfg, checkpoints, split):
    feat_dir = _require(cfg.features_dir / split, f"features for split '{split}'")
    feat_files = sorted(feat_dir.glob("*.feat"))
    if not feat_files:
        raise PathError(f"no feature files in {feat_dir}")
    models = [_load_model(ckpt, cfg.model) for ckpt in checkpoints]
    grids = {}
    for feat in feat_files:
        mel = load_features(feat)
        grids[f"{feat.stem}.wav"] = ensemble_average([m.predict(mel.values) for m in models])
    return grids


def _decode_all(cfg, grids, median_window=None):
    window = cfg.decode.median_window if median_window is None else median_window
    clips = {}
    for filename, grid in grids.items():
        binary = median_filter_grid(binarize(grid, cfg.decode), window)
        clips[filename] = frames_to_events(binary, grid.frame_duration_seconds, cfg.classes)
    return clips


def _run_predict(cfg, checkpoints, split, out_name):
    grids = _predict_grids(cfg, checkpoints, split)
    clips = _decode_all(cfg, grids)
    cfg.outputs_dir.mkdir(parents=True, exist_ok=True)
    out_path = cfg.outputs_dir / out_name
    write_events_tsv(out_path, clips)
    print(f"predict: wrote {sum(len(v) for v in clips.values())} events for {len(clips)} clips to {out_path}")
    return 0


def cmd_predict(cfg):
    if not cfg.predict_checkpoint:
        raise ConfigError("predict requires [predict] checkpoint")
    return _run_predict(cfg, [cfg.predict_checkpoint], cfg.predict_split, "predictions.tsv")


def cmd_ensemble_predict(cfg):
    # same artifact as `predict` so `eval` consumes either producer
    if not cfg.ensemble_members:
        raise ConfigError("ensemble-predict requires [ensemble] members")
    return _run_predict(cfg, list(cfg.ensemble_members), cfg.ensemble_split, "predictions.tsv")


def cmd_eval(cfg):
    ref_path = _require(cfg.data_dir / "test.tsv", "reference label file")
    pred_path = _require(cfg.outputs_dir / "predictions.tsv", "prediction file")
    reference = read_events_tsv(ref_path)
    predictions = read_events_tsv(pred_path)
    report = evaluate_corpus(reference, predictions, cfg.match)
    text = format_report(report)
    cfg.outputs_dir.mkdir(parents=True, exist_ok=True)
    (cfg.outputs_dir / "report.txt").write_text(text)
    write_report_csv(cfg.outputs_dir / "report.csv", report)
    print(text, end="")
    return 0


def cmd_sweep(cfg):
    systems = cfg.sweep_systems
    if not systems:
        if not cfg.predict_checkpoint:
            raise ConfigError("sweep requires [sweep] systems or a [predict] checkpoint")
        systems = (("model", (cfg.predict_checkpoint,)),)
    ref_path = _require(cfg.data_dir / f"{cfg.sweep_split}.tsv", "reference label file")
    reference = read_events_tsv(ref_path)
    rows = []
    for name, checkpoints in systems:
        grids = _predict_grids(cfg, checkpoints, cfg.sweep_split)
        scores = []
        for window in cfg.sweep_windows:
            clips = _decode_all(cfg, grids, median_window=window)
            report = evaluate_corpus(reference, clips, cfg.match)
            scores.append(report.macro_f)
        rows.append((name, scores))

    header = "system".ljust(20) + "".join(f"{w:>9d}" for w in cfg.sweep_windows)
    lines = [header]
    for name, scores in rows:
        lines.append(name.ljust(20) + "".join(f"{100.0 * s:>8.1f}%" for s in scores))
    table = "\n".join(lines) + "\n"
    cfg.outputs_dir.mkdir(parents=True, exist_ok=True)
    (cfg.outputs_dir / "sweep.txt").write_text(table)
    with open(cfg.outputs_dir / "sweep.csv", "w") as f:
        f.write("system," + ",".join(str(w) for w in cfg.sweep_windows) + "\n")
        for name, scores in rows:
            f.write(name + "," + ",".join(f"{100.0 * s:.4f}" for s in scores) + "\n")
    print(table, end="")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ensemble-predict": cmd_ensemble_predict,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="sedkit", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to the run configuration file")
    parser.add_argument("--seed", type=int, default=None, help="override the configured seed")
    parser.add_argument("--out", default=None, help="override the configured outputs directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed, out_override=args.out)
        return COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (PathError, FileNotFoundError) as e:
        print(f"path error: {e}", file=sys.stderr)
        return 3
    except CheckpointMismatch as e:
        print(f"checkpoint mismatch: {e}", file=sys.stderr)
        return 4
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
