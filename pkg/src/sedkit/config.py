"""Run configuration: "key = value" sections in a plain text file.

Comments start with '#'. Unknown sections or keys are rejected so typos
fail loudly before any work starts.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .decoding import DecodeConfig
from .evaluation import MatchConfig
from .model import ModelConfig
from .synth import CLASS_LABELS
from .training import ConfigError, TrainerConfig

_SCHEMA = {
    "run": {"seed"},
    "paths": {"data_dir", "features_dir", "checkpoints_dir", "outputs_dir"},
    "data": {"classes"},
    "synth": {"n_weak", "n_strong", "n_unlabeled", "n_test", "noise_floor_db"},
    "model": {"n_classes", "n_mels", "n_frames", "conv_filters", "poolings", "gru_units"},
    "trainer": {
        "method",
        "w_max",
        "ramp_steps",
        "ema_decay",
        "mixup_alpha",
        "k_augment",
        "sharpen_temp",
        "n_weak",
        "n_strong",
        "n_unlabeled",
        "epochs",
        "lr",
        "noise_sigma",
        "checkpoint_every",
    },
    "decode": {"frame_threshold", "clip_threshold", "median_window"},
    "match": {"onset_collar", "offset_collar_abs", "offset_collar_ratio"},
    "predict": {"checkpoint", "split"},
    "ensemble": {"members", "split"},
    "sweep": {"windows", "systems", "split"},
}


@dataclass
class RunConfig:
    seed: int = 7
    data_dir: Path = Path("data")
    features_dir: Path = Path("features")
    checkpoints_dir: Path = Path("checkpoints")
    outputs_dir: Path = Path("outputs")
    classes: tuple = CLASS_LABELS
    synth: dict = field(default_factory=dict)
    model: ModelConfig = field(default_factory=ModelConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    predict_checkpoint: str = ""
    predict_split: str = "test"
    ensemble_members: tuple = ()
    ensemble_split: str = "test"
    sweep_windows: tuple = (5, 7, 9, 11, 13)
    sweep_systems: tuple = ()  # (name, (ckpt, ...)) pairs
    sweep_split: str = "test"


def _parse_poolings(text):
    pairs = []
    for token in text.split(","):
        t, f = token.strip().split("x")
        pairs.append((int(t), int(f)))
    return tuple(pairs)


def _parse_systems(text):
    systems = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if ":" not in line:
            raise ConfigError(f"sweep system '{line}' must look like name:ckpt[,ckpt...]")
        name, paths = line.split(":", 1)
        systems.append((name.strip(), tuple(p.strip() for p in paths.split(",") if p.strip())))
    return tuple(systems)


def load_config(path, seed_override=None, out_override=None):
    """Parse and validate a config file into a RunConfig."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser(
        comment_prefixes=("#",), inline_comment_prefixes=("#",), interpolation=None
    )
    with open(path) as f:
        parser.read_file(f)

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")

    cfg = RunConfig()

    def get(section, key, default=None):
        if parser.has_option(section, key):
            return parser.get(section, key)
        return default

    if get("run", "seed") is not None:
        cfg.seed = int(get("run", "seed"))
    if seed_override is not None:
        cfg.seed = int(seed_override)

    base = path.parent
    for name in ("data_dir", "features_dir", "checkpoints_dir", "outputs_dir"):
        value = get("paths", name)
        if value is not None:
            setattr(cfg, name, base / value if not Path(value).is_absolute() else Path(value))
    if out_override is not None:
        cfg.outputs_dir = Path(out_override)

    if get("data", "classes"):
        cfg.classes = tuple(c.strip() for c in get("data", "classes").split(",") if c.strip())

    cfg.synth = {
        "n_weak": int(get("synth", "n_weak", 200)),
        "n_strong": int(get("synth", "n_strong", 200)),
        "n_unlabeled": int(get("synth", "n_unlabeled", 1000)),
        "n_test": int(get("synth", "n_test", 100)),
        "noise_floor_db": float(get("synth", "noise_floor_db", -30.0)),
    }

    model_kwargs = {}
    if get("model", "n_classes"):
        model_kwargs["n_classes"] = int(get("model", "n_classes"))
    if get("model", "n_mels"):
        model_kwargs["n_mels"] = int(get("model", "n_mels"))
    if get("model", "n_frames"):
        model_kwargs["n_frames"] = int(get("model", "n_frames"))
    if get("model", "conv_filters"):
        model_kwargs["conv_filters"] = tuple(int(v) for v in get("model", "conv_filters").split(","))
    if get("model", "poolings"):
        model_kwargs["poolings"] = _parse_poolings(get("model", "poolings"))
    if get("model", "gru_units"):
        model_kwargs["gru_units"] = int(get("model", "gru_units"))
    try:
        cfg.model = ModelConfig(**model_kwargs)
    except ValueError as e:
        raise ConfigError(f"invalid [model] configuration: {e}") from e

    trainer_kwargs = {"seed": cfg.seed}
    casts = {
        "method": str,
        "w_max": float,
        "ramp_steps": int,
        "ema_decay": float,
        "mixup_alpha": float,
        "k_augment": int,
        "sharpen_temp": float,
        "n_weak": int,
        "n_strong": int,
        "n_unlabeled": int,
        "epochs": int,
        "lr": float,
        "noise_sigma": float,
        "checkpoint_every": int,
    }
    for key, cast_fn in casts.items():
        value = get("trainer", key)
        if value is not None:
            trainer_kwargs[key] = cast_fn(value)
    cfg.trainer = TrainerConfig(**trainer_kwargs)

    decode_kwargs = {}
    for key, cast_fn in (("frame_threshold", float), ("clip_threshold", float), ("median_window", int)):
        value = get("decode", key)
        if value is not None:
            decode_kwargs[key] = cast_fn(value)
    try:
        cfg.decode = DecodeConfig(**decode_kwargs)
    except ValueError as e:
        raise ConfigError(f"invalid [decode] configuration: {e}") from e

    match_kwargs = {}
    for key in ("onset_collar", "offset_collar_abs", "offset_collar_ratio"):
        value = get("match", key)
        if value is not None:
            match_kwargs[key] = float(value)
    try:
        cfg.match = MatchConfig(**match_kwargs)
    except ValueError as e:
        raise ConfigError(f"invalid [match] configuration: {e}") from e

    cfg.predict_checkpoint = get("predict", "checkpoint", "")
    cfg.predict_split = get("predict", "split", "test")
    if get("ensemble", "members"):
        cfg.ensemble_members = tuple(
            m.strip() for m in get("ensemble", "members").replace("\n", ",").split(",") if m.strip()
        )
    cfg.ensemble_split = get("ensemble", "split", "test")
    if get("sweep", "windows"):
        cfg.sweep_windows = tuple(int(w) for w in get("sweep", "windows").split(","))
    if get("sweep", "systems"):
        cfg.sweep_systems = _parse_systems(get("sweep", "systems"))
    cfg.sweep_split = get("sweep", "split", "test")

    if len(cfg.classes) != cfg.model.n_classes:
        raise ConfigError(
            f"{len(cfg.classes)} class labels configured but model expects {cfg.model.n_classes}"
        )
    return cfg
