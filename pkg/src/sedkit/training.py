"""Semi-supervised trainers: mean teacher, interpolation consistency, and
a MixMatch-style variant for multi-hot labels.

All three share one loss layout,

    total = L_w + L_s + w(t) * L_cw + w(t) * L_cs,

where L_w is clip-level BCE on weakly labeled items, L_s frame-level BCE
on strongly labeled items, and L_cw / L_cs are clip/frame mean-squared
consistency terms against an EMA teacher whose outputs carry no
gradient. They differ in how consistency targets are built:

- mean_teacher: teacher predictions on differently-augmented copies.
- ict: one lambda per batch; each partition is shuffled against itself,
  the student sees mixed inputs, targets are the equally mixed teacher
  predictions (and supervised terms use mixed labels).
- mixmatch_variant: like ict, but unlabeled items get K augmented
  copies whose teacher predictions are averaged and sharpened before
  mixing; every consistency target is sharpened. Mixing never crosses
  data types.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .features import FLOOR_EPS, HOP_SECONDS, load_features
from .model import CRNN, copy_model
from .optim import Adam
from .events import read_events_tsv, read_weak_tsv

BCE_EPS = 1e-7
METHODS = ("mean_teacher", "ict", "mixmatch_variant")


class ConfigError(ValueError):
    """Invalid trainer or batch configuration."""


@dataclass
class TrainerConfig:
    method: str = "mean_teacher"
    w_max: float = 1.0
    ramp_steps: int = 200
    ema_decay: float = 0.999
    mixup_alpha: float = 1.0
    k_augment: int = 2
    sharpen_temp: float = 0.5
    n_weak: int = 6
    n_strong: int = 6
    n_unlabeled: int = 12
    epochs: int = 30
    lr: float = 1e-3
    noise_sigma: float = 0.1
    checkpoint_every: int = 10
    seed: int = 0
    lambda_override: float | None = None  # pins Mix_lambda (tests/ablations)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown training method '{self.method}' (expected one of {METHODS})")
        if self.w_max < 0:
            raise ConfigError(f"w_max must be >= 0, got {self.w_max}")
        if not 0.0 < self.ema_decay < 1.0:
            raise ConfigError(f"ema_decay must lie in (0, 1), got {self.ema_decay}")
        if self.mixup_alpha <= 0:
            raise ConfigError(f"mixup_alpha must be positive, got {self.mixup_alpha}")
        if self.method == "mixmatch_variant" and self.k_augment < 2:
            raise ConfigError(f"mixmatch_variant requires k_augment >= 2, got {self.k_augment}")
        if self.sharpen_temp <= 0:
            raise ConfigError(f"sharpen_temp must be positive, got {self.sharpen_temp}")


@dataclass
class LossBundle:
    l_w: float
    l_s: float
    l_cw: float
    l_cs: float
    w_t: float
    total: float

    def identity_gap(self):
        return abs(self.total - (self.l_w + self.l_s + self.w_t * (self.l_cw + self.l_cs)))


# -- building blocks ----------------------------------------------------------


def mixup(a, b, lam):
    """Elementwise convex combination lam*a + (1-lam)*b; applies to inputs
    and to (pseudo-)labels alike."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"mixup: shapes {a.shape} and {b.shape} differ")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixup: lambda must lie in [0, 1], got {lam}")
    return lam * a + (1.0 - lam) * b


def sample_lambda(rng, mixup_alpha):
    """One Beta(alpha, alpha) draw; a fresh lambda per batch."""
    if mixup_alpha <= 0:
        raise ValueError(f"mixup_alpha must be positive, got {mixup_alpha}")
    return float(rng.beta(mixup_alpha, mixup_alpha))


def consistency_weight(t, ramp_steps, w_max):
    """w(t) = w_max * exp(-5 (1 - min(t, T)/T)^2): a slow ramp capped at
    w_max."""
    frac = min(float(t), float(ramp_steps)) / float(ramp_steps)
    return w_max * math.exp(-5.0 * (1.0 - frac) ** 2)


def ema_update(teacher_state, student_state, decay):
    """theta' <- decay * theta' + (1 - decay) * theta, per entry."""
    if set(teacher_state) != set(student_state):
        odd = sorted(set(teacher_state) ^ set(student_state))
        raise ValueError(f"ema_update: parameter sets differ: {odd[:4]}")
    out = {}
    for name, t_val in teacher_state.items():
        s_val = student_state[name]
        if t_val.shape != s_val.shape:
            raise ValueError(f"ema_update: shape mismatch for parameter '{name}'")
        out[name] = decay * t_val + (1.0 - decay) * s_val
    return out


def sharpen(p, temperature):
    """Binary sharpening p -> p^(1/T) / (p^(1/T) + (1-p)^(1/T)); T < 1
    pushes probabilities away from 0.5, T = 1 is the identity."""
    p = np.asarray(p)
    e = 1.0 / temperature
    num = p**e
    return num / (num + (1.0 - p) ** e)


def bce_loss(pred, target):
    """Mean binary cross entropy; `pred` is a probability tensor, targets
    may be hard {0,1} or soft [0,1]. Predictions are squeezed into
    (eps, 1-eps) by an affine map so the gradient stays exact."""
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ad.ShapeError(f"bce_loss: prediction {pred.shape} vs target {target.shape}")
    p = pred * (1.0 - 2.0 * BCE_EPS) + BCE_EPS
    y = Tensor(target)
    one = Tensor(np.asarray(1.0, dtype=pred.dtype))
    ll = y * ad.log(p) + (one - y) * ad.log(one - p)
    return -ad.tensor_mean(ll)


def mse_consistency(student_out, teacher_out):
    """Mean squared difference; the teacher side is a constant (no
    gradient flows into it)."""
    teacher_out = np.asarray(teacher_out, dtype=student_out.dtype)
    if student_out.shape != teacher_out.shape:
        raise ad.ShapeError(f"mse_consistency: {student_out.shape} vs {teacher_out.shape}")
    d = student_out - Tensor(teacher_out)
    return ad.tensor_mean(d * d)


def strong_label_grid(events, class_labels, n_hop_frames=1024, time_pool=4):
    """Rasterize events at STFT-hop resolution (a frame is active when the
    event overlaps it), then max-pool to the model's output resolution."""
    index = {label: i for i, label in enumerate(class_labels)}
    fine = np.zeros((n_hop_frames, len(class_labels)), dtype=np.float32)
    for e in events:
        start = int(e.onset / HOP_SECONDS)
        end = int(math.ceil(e.offset / HOP_SECONDS))
        fine[start : min(max(end, start + 1), n_hop_frames), index[e.label]] = 1.0
    return fine.reshape(n_hop_frames // time_pool, time_pool, -1).max(axis=1)


def augment_batch(x, sigma, rng):
    """Per-clip white noise on the pre-log mel energies of a stacked
    (N, mels, frames) log-mel batch; one rng draw per call."""
    if sigma == 0.0:
        return x
    energies = np.clip(np.exp(x.astype(np.float64)) - FLOOR_EPS, 0.0, None)
    scale = sigma * energies.mean(axis=(1, 2), keepdims=True)
    noisy = np.clip(energies + rng.normal(size=x.shape) * scale, 0.0, None)
    return np.log(noisy + FLOOR_EPS).astype(np.float32)


# -- data ------------------------------------------------------------------


@dataclass
class TrainingData:
    weak_x: np.ndarray  # (Nw, mels, frames) float32 log-mel
    weak_y: np.ndarray  # (Nw, C) multi-hot
    strong_x: np.ndarray
    strong_y: np.ndarray  # (Ns, T_out, C)
    unlabeled_x: np.ndarray
    class_labels: tuple


def _load_stack(features_dir, filenames):
    feats = [load_features(Path(features_dir) / f"{Path(name).stem}.feat").values for name in filenames]
    return np.stack(feats) if feats else np.zeros((0, 128, 1024), dtype=np.float32)


def load_training_data(features_dir, data_dir, class_labels, time_pool=4, n_hop_frames=1024):
    """Assemble the three training pools from feature files + label TSVs."""
    features_dir = Path(features_dir)
    data_dir = Path(data_dir)
    index = {label: i for i, label in enumerate(class_labels)}

    weak = read_weak_tsv(data_dir / "weak.tsv") if (data_dir / "weak.tsv").exists() else {}
    weak_names = sorted(weak)
    weak_y = np.zeros((len(weak_names), len(class_labels)), dtype=np.float32)
    for i, name in enumerate(weak_names):
        for label in weak[name]:
            weak_y[i, index[label]] = 1.0

    strong = read_events_tsv(data_dir / "strong.tsv") if (data_dir / "strong.tsv").exists() else {}
    strong_names = sorted(strong)
    strong_y = np.stack(
        [strong_label_grid(strong[name], class_labels, n_hop_frames, time_pool) for name in strong_names]
    ) if strong_names else np.zeros((0, n_hop_frames // time_pool, len(class_labels)), dtype=np.float32)

    unlabeled_dir = features_dir / "unlabeled"
    unlabeled_names = sorted(p.name for p in unlabeled_dir.glob("*.feat")) if unlabeled_dir.exists() else []

    return TrainingData(
        weak_x=_load_stack(features_dir / "weak", weak_names),
        weak_y=weak_y,
        strong_x=_load_stack(features_dir / "strong", strong_names),
        strong_y=strong_y,
        unlabeled_x=_load_stack(features_dir / "unlabeled", unlabeled_names),
        class_labels=tuple(class_labels),
    )


class _Cycler:
    """Shuffled index stream over a pool, reshuffling on exhaustion."""

    def __init__(self, n, rng):
        self.n = n
        self.rng = rng
        self.order = rng.permutation(n) if n else np.array([], dtype=int)
        self.pos = 0

    def take(self, k):
        out = []
        while len(out) < k:
            if self.pos >= self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            out.append(self.order[self.pos])
            self.pos += 1
        return np.array(out, dtype=int)


# -- the trainer ----------------------------------------------------------


class Trainer:
    """Owns student, teacher, optimizer state, and the RNG streams.

    Separate named streams (data order / student augmentation / teacher
    augmentation / mixing) keep trajectories comparable across methods:
    a method that never draws from one stream cannot desynchronize the
    others.
    """

    def __init__(self, model_config, data, config, log_path=None):
        if config.n_weak > 0 and data.weak_x.shape[0] == 0:
            raise ConfigError("batch requests weak items but the weak pool is empty")
        if config.n_strong > 0 and data.strong_x.shape[0] == 0:
            raise ConfigError("batch requests strong items but the strong pool is empty")
        needs_unlabeled = config.w_max > 0 and config.n_unlabeled > 0
        if needs_unlabeled and data.unlabeled_x.shape[0] == 0:
            raise ConfigError("batch requests unlabeled items but the unlabeled pool is empty")
        if config.method == "ict" and config.w_max > 0:
            for name, count in (("weak", config.n_weak), ("strong", config.n_strong), ("unlabeled", config.n_unlabeled)):
                if count == 1:
                    raise ConfigError(f"ict cannot pair a single-{name}-item partition")

        self.config = config
        self.data = data
        seq = np.random.SeedSequence(config.seed)
        init_s, data_s, aug_student_s, aug_teacher_s, mix_s = seq.spawn(5)
        self.student = CRNN(model_config, np.random.default_rng(init_s))
        self.teacher = copy_model(self.student)
        self.optimizer = Adam(self.student.parameters(), lr=config.lr)
        self.rng_data = np.random.default_rng(data_s)
        self.rng_aug_student = np.random.default_rng(aug_student_s)
        self.rng_aug_teacher = np.random.default_rng(aug_teacher_s)
        self.rng_mix = np.random.default_rng(mix_s)
        self.cycle_weak = _Cycler(data.weak_x.shape[0], self.rng_data)
        self.cycle_strong = _Cycler(data.strong_x.shape[0], self.rng_data)
        self.cycle_unlabeled = _Cycler(data.unlabeled_x.shape[0], self.rng_data)
        self.global_step = 0
        self.log_path = Path(log_path) if log_path else None
        self._log_rows = []

    @property
    def steps_per_epoch(self):
        n = 0
        if self.config.n_weak:
            n = max(n, math.ceil(self.data.weak_x.shape[0] / self.config.n_weak))
        if self.config.n_strong:
            n = max(n, math.ceil(self.data.strong_x.shape[0] / self.config.n_strong))
        return max(n, 1)

    def _sample_batch(self):
        cfg = self.config
        iw = self.cycle_weak.take(cfg.n_weak) if cfg.n_weak else np.array([], dtype=int)
        i_s = self.cycle_strong.take(cfg.n_strong) if cfg.n_strong else np.array([], dtype=int)
        use_unlabeled = cfg.w_max > 0 and cfg.n_unlabeled > 0
        iu = self.cycle_unlabeled.take(cfg.n_unlabeled) if use_unlabeled else np.array([], dtype=int)
        return (
            self.data.weak_x[iw],
            self.data.weak_y[iw],
            self.data.strong_x[i_s],
            self.data.strong_y[i_s],
            self.data.unlabeled_x[iu],
        )

    def _lambda(self):
        if self.config.lambda_override is not None:
            return float(self.config.lambda_override)
        return sample_lambda(self.rng_mix, self.config.mixup_alpha)

    def _teacher_forward(self, x):
        with ad.no_grad():
            frame, clip = self.teacher.forward(x, train=True, track_stats=False)
        return frame.data, clip.data

    def _combine(self, l_w, l_s, l_cw=None, l_cs=None, w_t=0.0):
        """Total loss at float64 so the logged LossBundle identity is exact."""
        total = ad.cast(l_w, np.float64) + ad.cast(l_s, np.float64)
        parts = [float(l_w.data), float(l_s.data), 0.0, 0.0]
        if l_cw is not None:
            total = total + w_t * ad.cast(l_cw, np.float64) + w_t * ad.cast(l_cs, np.float64)
            parts[2] = float(l_cw.data)
            parts[3] = float(l_cs.data)
        return total, tuple(parts)

    def _finish_step(self, total_tensor, parts, w_t):
        self.optimizer.zero_grad()
        total_tensor.backward()
        self.optimizer.step()
        self._apply_ema()
        bundle = LossBundle(*parts, w_t=w_t, total=float(total_tensor.data))
        self.global_step += 1
        self._log_rows.append(bundle)
        return bundle

    def _apply_ema(self):
        merged = ema_update(self.teacher.state_dict(), self.student.state_dict(), self.config.ema_decay)
        self.teacher.load_state_dict(merged)

    # -- one optimization step per method --------------------------------

    def train_step(self):
        xw, yw, xs, ys, xu = self._sample_batch()
        step_fn = {
            "mean_teacher": self._step_mean_teacher,
            "ict": self._step_ict,
            "mixmatch_variant": self._step_mixmatch,
        }[self.config.method]
        return step_fn(xw, yw, xs, ys, xu)

    def _step_mean_teacher(self, xw, yw, xs, ys, xu):
        cfg = self.config
        w_t = consistency_weight(self.global_step, cfg.ramp_steps, cfg.w_max)
        x_all = np.concatenate([xw, xs, xu])
        x_student = augment_batch(x_all, cfg.noise_sigma, self.rng_aug_student)
        frame, clip = self.student.forward(x_student, train=True)
        nw, ns = xw.shape[0], xs.shape[0]
        l_w = bce_loss(clip[:nw], yw)
        l_s = bce_loss(frame[nw : nw + ns], ys)
        if cfg.w_max > 0:
            x_teacher = augment_batch(x_all, cfg.noise_sigma, self.rng_aug_teacher)
            t_frame, t_clip = self._teacher_forward(x_teacher)
            total, parts = self._combine(l_w, l_s, mse_consistency(clip, t_clip), mse_consistency(frame, t_frame), w_t)
        else:
            total, parts = self._combine(l_w, l_s)
        return self._finish_step(total, parts, w_t)

    def _step_ict(self, xw, yw, xs, ys, xu):
        cfg = self.config
        w_t = consistency_weight(self.global_step, cfg.ramp_steps, cfg.w_max)
        lam = self._lambda()
        nw, ns, nu = xw.shape[0], xs.shape[0], xu.shape[0]
        perms = [self.rng_mix.permutation(n) for n in (nw, ns, nu)]
        x_all = np.concatenate([xw, xs, xu])
        x_aug = augment_batch(x_all, cfg.noise_sigma, self.rng_aug_student)
        perm_all = np.concatenate([perms[0], nw + perms[1], nw + ns + perms[2]]).astype(int)
        x_mixed = mixup(x_aug, x_aug[perm_all], lam)
        frame, clip = self.student.forward(x_mixed, train=True)
        l_w = bce_loss(clip[:nw], mixup(yw, yw[perms[0]], lam))
        l_s = bce_loss(frame[nw : nw + ns], mixup(ys, ys[perms[1]], lam))
        if cfg.w_max > 0:
            x_teacher = augment_batch(x_all, cfg.noise_sigma, self.rng_aug_teacher)
            t_frame, t_clip = self._teacher_forward(x_teacher)
            l_cw = mse_consistency(clip, mixup(t_clip, t_clip[perm_all], lam))
            l_cs = mse_consistency(frame, mixup(t_frame, t_frame[perm_all], lam))
            total, parts = self._combine(l_w, l_s, l_cw, l_cs, w_t)
        else:
            total, parts = self._combine(l_w, l_s)
        return self._finish_step(total, parts, w_t)

    def _step_mixmatch(self, xw, yw, xs, ys, xu):
        cfg = self.config
        w_t = consistency_weight(self.global_step, cfg.ramp_steps, cfg.w_max)
        lam = self._lambda()
        nw, ns, nu = xw.shape[0], xs.shape[0], xu.shape[0]
        k = cfg.k_augment
        perm_w = self.rng_mix.permutation(nw)
        perm_s = self.rng_mix.permutation(ns)
        perm_u = self.rng_mix.permutation(nu * k) if nu else np.array([], dtype=int)

        x_labeled = np.concatenate([xw, xs])
        x_labeled_aug = augment_batch(x_labeled, cfg.noise_sigma, self.rng_aug_student)
        xu_copies = (
            np.concatenate([augment_batch(xu, cfg.noise_sigma, self.rng_aug_student) for _ in range(k)])
            if nu
            else xu
        )

        perm_labeled = np.concatenate([perm_w, nw + perm_s]).astype(int)
        x_labeled_mixed = mixup(x_labeled_aug, x_labeled_aug[perm_labeled], lam)
        xu_mixed = mixup(xu_copies, xu_copies[perm_u], lam) if nu else xu_copies
        x_student = np.concatenate([x_labeled_mixed, xu_mixed])

        frame, clip = self.student.forward(x_student, train=True)
        l_w = bce_loss(clip[:nw], mixup(yw, yw[perm_w], lam))
        l_s = bce_loss(frame[nw : nw + ns], mixup(ys, ys[perm_s], lam))

        if cfg.w_max > 0:
            # teacher targets: differently-augmented labeled items; for the
            # unlabeled copies, predictions averaged over the K copies
            x_teacher_labeled = augment_batch(x_labeled, cfg.noise_sigma, self.rng_aug_teacher)
            t_in = np.concatenate([x_teacher_labeled, xu_copies]) if nu else x_teacher_labeled
            t_frame, t_clip = self._teacher_forward(t_in)
            tl_frame, tl_clip = t_frame[: nw + ns], t_clip[: nw + ns]
            if nu:
                tu_frame = t_frame[nw + ns :].reshape(k, nu, *t_frame.shape[1:]).mean(axis=0)
                tu_clip = t_clip[nw + ns :].reshape(k, nu, -1).mean(axis=0)
                pseudo_frame = np.tile(sharpen(tu_frame, cfg.sharpen_temp), (k, 1, 1))
                pseudo_clip = np.tile(sharpen(tu_clip, cfg.sharpen_temp), (k, 1))
                target_frame = np.concatenate(
                    [self._mix_sharpened(tl_frame, perm_labeled, lam), mixup(pseudo_frame, pseudo_frame[perm_u], lam)]
                )
                target_clip = np.concatenate(
                    [self._mix_sharpened(tl_clip, perm_labeled, lam), mixup(pseudo_clip, pseudo_clip[perm_u], lam)]
                )
            else:
                target_frame = self._mix_sharpened(tl_frame, perm_labeled, lam)
                target_clip = self._mix_sharpened(tl_clip, perm_labeled, lam)
            l_cw = mse_consistency(clip, target_clip)
            l_cs = mse_consistency(frame, target_frame)
            total, parts = self._combine(l_w, l_s, l_cw, l_cs, w_t)
        else:
            total, parts = self._combine(l_w, l_s)
        return self._finish_step(total, parts, w_t)

    def _mix_sharpened(self, teacher_out, perm, lam):
        sharp = sharpen(teacher_out, self.config.sharpen_temp)
        return mixup(sharp, sharp[perm], lam)

    # -- loop -------------------------------------------------------------

    def train(self, checkpoint_dir=None, progress=None):
        checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        for epoch in range(self.config.epochs):
            for _ in range(self.steps_per_epoch):
                self.train_step()
            if progress:
                progress(epoch, self._log_rows[-1])
            if checkpoint_dir and (epoch + 1) % self.config.checkpoint_every == 0:
                self._save_checkpoints(checkpoint_dir, f"_ep{epoch + 1}")
        if checkpoint_dir:
            self._save_checkpoints(checkpoint_dir, "")
        if self.log_path:
            self.write_log(self.log_path)

    def _save_checkpoints(self, checkpoint_dir, suffix):
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        self.student.save(checkpoint_dir / f"student{suffix}.ckpt")
        self.teacher.save(checkpoint_dir / f"teacher{suffix}.ckpt")

    def write_log(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "L_w", "L_s", "L_cw", "L_cs", "w_t", "total"])
            for i, b in enumerate(self._log_rows):
                writer.writerow(
                    [i, f"{b.l_w:.6f}", f"{b.l_s:.6f}", f"{b.l_cw:.6f}", f"{b.l_cs:.6f}", f"{b.w_t:.6f}", f"{b.total:.6f}"]
                )
