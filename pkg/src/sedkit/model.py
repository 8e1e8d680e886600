"""CRNN for sound event detection.

Gated conv blocks (linear and sigmoid-gated paths, each conv + batch
norm, multiplied, then max-pooled) feed two bidirectional GRU layers.
Two heads read the recurrent features: a sigmoid frame classifier and an
attention block whose per-class softmax over time turns frame
probabilities into clip probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .features import HOP_SECONDS
from .optim import Parameter, load_checkpoint, save_checkpoint

DEFAULT_FILTERS = (16, 32, 64, 128, 128, 128, 128)
DEFAULT_POOLINGS = ((2, 2), (2, 2), (1, 2), (1, 2), (1, 2), (1, 2), (1, 2))

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class ModelConfig:
    n_classes: int = 10
    n_mels: int = 128
    n_frames: int = 1024
    conv_filters: tuple = DEFAULT_FILTERS
    poolings: tuple = DEFAULT_POOLINGS  # (time, freq) factors per block
    gru_units: int = 64  # per direction

    def __post_init__(self):
        self.conv_filters = tuple(self.conv_filters)
        self.poolings = tuple(tuple(p) for p in self.poolings)
        if len(self.conv_filters) != len(self.poolings):
            raise ValueError(
                f"conv_filters ({len(self.conv_filters)}) and poolings "
                f"({len(self.poolings)}) must have equal length"
            )
        if self.n_frames % self.time_pool or self.n_mels % self.freq_pool:
            raise ValueError(
                f"pooling products (time {self.time_pool}, freq {self.freq_pool}) "
                f"must divide input dims ({self.n_frames}, {self.n_mels})"
            )

    @property
    def time_pool(self):
        return int(np.prod([p[0] for p in self.poolings]))

    @property
    def freq_pool(self):
        return int(np.prod([p[1] for p in self.poolings]))

    @property
    def frames_out(self):
        return self.n_frames // self.time_pool

    @property
    def frame_duration(self):
        return HOP_SECONDS * self.time_pool

    @property
    def gru_input_width(self):
        return self.conv_filters[-1] * (self.n_mels // self.freq_pool)


@dataclass
class PosteriorGrid:
    """Frame-level and clip-level class probabilities for one clip."""

    frame_probs: np.ndarray  # (frames_out, n_classes) in [0, 1]
    clip_probs: np.ndarray  # (n_classes,) in [0, 1]
    frame_duration_seconds: float = field(default=HOP_SECONDS * 4)


def _uniform_init(rng, shape, fan_in, fan_out, dtype):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class BatchNorm:
    """Per-channel batch normalization over (N, C, T, F) feature maps."""

    def __init__(self, prefix, channels, dtype):
        self.gamma = Parameter(f"{prefix}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Parameter(f"{prefix}.beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.prefix = prefix

    def forward(self, x, train, track_stats=None):
        track_stats = train if track_stats is None else track_stats
        c = self.gamma.data.shape[0]
        shape = (1, c, 1, 1)
        if train:
            mu = ad.tensor_mean(x, axis=(0, 2, 3), keepdims=True)
            centered = x - mu
            var = ad.tensor_mean(centered * centered, axis=(0, 2, 3), keepdims=True)
            if track_stats:
                m = BN_MOMENTUM
                self.running_mean = ((1 - m) * self.running_mean + m * mu.data.reshape(c)).astype(
                    self.running_mean.dtype
                )
                self.running_var = ((1 - m) * self.running_var + m * var.data.reshape(c)).astype(
                    self.running_var.dtype
                )
            xhat = centered / ad.sqrt(var + Tensor(np.asarray(BN_EPS, dtype=x.dtype)))
        else:
            mu = Tensor(self.running_mean.reshape(shape))
            denom = Tensor(np.sqrt(self.running_var + BN_EPS).reshape(shape))
            xhat = (x - mu) / denom
        return ad.reshape(self.gamma.tensor, shape) * xhat + ad.reshape(self.beta.tensor, shape)

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {
            f"{self.prefix}.running_mean": self.running_mean,
            f"{self.prefix}.running_var": self.running_var,
        }


class GLUBlock:
    """o = bn(x*W + b) * sigmoid(bn_g(x*W_g + b_g)), then max-pooling."""

    def __init__(self, prefix, c_in, c_out, pooling, rng, dtype):
        fan_in, fan_out = c_in * 9, c_out * 9
        self.w_lin = Parameter(f"{prefix}.lin.w", _uniform_init(rng, (c_out, c_in, 3, 3), fan_in, fan_out, dtype))
        self.b_lin = Parameter(f"{prefix}.lin.b", np.zeros(c_out, dtype=dtype))
        self.w_gate = Parameter(f"{prefix}.gate.w", _uniform_init(rng, (c_out, c_in, 3, 3), fan_in, fan_out, dtype))
        self.b_gate = Parameter(f"{prefix}.gate.b", np.zeros(c_out, dtype=dtype))
        self.bn_lin = BatchNorm(f"{prefix}.bn_lin", c_out, dtype)
        self.bn_gate = BatchNorm(f"{prefix}.bn_gate", c_out, dtype)
        self.pooling = pooling

    def forward(self, x, train, track_stats=None):
        lin = self.bn_lin.forward(ad.conv2d(x, self.w_lin.tensor, self.b_lin.tensor), train, track_stats)
        gate = self.bn_gate.forward(ad.conv2d(x, self.w_gate.tensor, self.b_gate.tensor), train, track_stats)
        gated = lin * ad.sigmoid(gate)
        if self.pooling == (1, 1):
            return gated
        return ad.max_pool2d(gated, self.pooling)

    def parameters(self):
        return [self.w_lin, self.b_lin, self.w_gate, self.b_gate] + self.bn_lin.parameters() + self.bn_gate.parameters()

    def buffers(self):
        return {**self.bn_lin.buffers(), **self.bn_gate.buffers()}


class BiGRULayer:
    def __init__(self, prefix, d_in, units, rng, dtype):
        def mats(tag):
            return (
                Parameter(f"{prefix}.{tag}.w_x", _uniform_init(rng, (d_in, 3 * units), d_in, units, dtype)),
                Parameter(f"{prefix}.{tag}.w_h", _uniform_init(rng, (units, 3 * units), units, units, dtype)),
                Parameter(f"{prefix}.{tag}.b", np.zeros(3 * units, dtype=dtype)),
            )

        self.fwd = mats("fwd")
        self.bwd = mats("bwd")

    def forward(self, x):
        h_fwd = ad.gru_sequence(x, self.fwd[0].tensor, self.fwd[1].tensor, self.fwd[2].tensor)
        h_bwd = ad.gru_sequence(x, self.bwd[0].tensor, self.bwd[1].tensor, self.bwd[2].tensor, reverse=True)
        return ad.concat([h_fwd, h_bwd], axis=2)

    def parameters(self):
        return [*self.fwd, *self.bwd]


class CRNN:
    """The full network; one instance owns its parameters and BN buffers."""

    def __init__(self, config, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        self.dtype = dtype
        self.blocks = []
        c_in = 1
        for i, (c_out, pooling) in enumerate(zip(config.conv_filters, config.poolings)):
            self.blocks.append(GLUBlock(f"block{i}", c_in, c_out, pooling, rng, dtype))
            c_in = c_out
        width = config.gru_input_width
        units = config.gru_units
        self.gru0 = BiGRULayer("gru0", width, units, rng, dtype)
        self.gru1 = BiGRULayer("gru1", 2 * units, units, rng, dtype)
        d_feat = 2 * units
        c = config.n_classes
        self.w_cls = Parameter("cls.w", _uniform_init(rng, (d_feat, c), d_feat, c, dtype))
        self.b_cls = Parameter("cls.b", np.zeros(c, dtype=dtype))
        self.w_att = Parameter("att.w", _uniform_init(rng, (d_feat, c), d_feat, c, dtype))
        self.b_att = Parameter("att.b", np.zeros(c, dtype=dtype))

    def parameters(self):
        params = []
        for b in self.blocks:
            params += b.parameters()
        params += self.gru0.parameters() + self.gru1.parameters()
        params += [self.w_cls, self.b_cls, self.w_att, self.b_att]
        return params

    def forward(self, x, train=False, track_stats=None):
        """x: (N, n_mels, n_frames) array -> (frame_probs (N, T', C),
        clip_probs (N, C)) tensors."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1:] != (self.config.n_mels, self.config.n_frames):
            raise ad.ShapeError(
                f"model_forward: input {x.shape[1:]} does not match configured "
                f"({self.config.n_mels}, {self.config.n_frames})"
            )
        n = x.shape[0]
        h = Tensor(np.ascontiguousarray(x.transpose(0, 2, 1))[:, None, :, :])  # (N,1,T,F)
        for block in self.blocks:
            h = block.forward(h, train, track_stats)
        _, c_last, t_out, f_out = h.shape
        seq = ad.reshape(ad.transpose(h, (2, 0, 1, 3)), (t_out, n, c_last * f_out))
        seq = self.gru1.forward(self.gru0.forward(seq))  # (T', N, 2H)
        flat = ad.reshape(seq, (t_out * n, seq.shape[2]))
        frame_logits = ad.matmul(flat, self.w_cls.tensor) + self.b_cls.tensor
        frame_probs = ad.reshape(ad.sigmoid(frame_logits), (t_out, n, self.config.n_classes))
        att_logits = ad.reshape(
            ad.matmul(flat, self.w_att.tensor) + self.b_att.tensor,
            (t_out, n, self.config.n_classes),
        )
        attention = ad.softmax(att_logits, axis=0)  # sums to 1 over time, per clip & class
        clip_probs = ad.tensor_sum(attention * frame_probs, axis=0)  # (N, C)
        return ad.transpose(frame_probs, (1, 0, 2)), clip_probs

    def predict(self, x):
        """Inference on one clip's mel values -> PosteriorGrid (numpy)."""
        with ad.no_grad():
            frame, clip = self.forward(x, train=False)
        return PosteriorGrid(
            frame_probs=frame.data[0].astype(np.float64),
            clip_probs=clip.data[0].astype(np.float64),
            frame_duration_seconds=self.config.frame_duration,
        )

    # -- persistence ------------------------------------------------------

    def state_dict(self):
        state = {p.name: p.data for p in self.parameters()}
        for b in self.blocks:
            state.update(b.buffers())
        return state

    def load_state_dict(self, state):
        own = self.state_dict()
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise ValueError(
                f"checkpoint does not match model config (missing: {missing[:4]}, unexpected: {extra[:4]})"
            )
        for p in self.parameters():
            if p.data.shape != state[p.name].shape:
                raise ValueError(
                    f"checkpoint does not match model config: '{p.name}' is "
                    f"{state[p.name].shape}, model expects {p.data.shape}"
                )
            p.data = state[p.name].astype(self.dtype).copy()
        for b in self.blocks:
            for bn in (b.bn_lin, b.bn_gate):
                bn.running_mean = state[f"{bn.prefix}.running_mean"].astype(self.dtype).copy()
                bn.running_var = state[f"{bn.prefix}.running_var"].astype(self.dtype).copy()

    def save(self, path):
        save_checkpoint(path, self.state_dict())

    @classmethod
    def load(cls, path, config, dtype=np.float32):
        model = cls(config, np.random.default_rng(0), dtype=dtype)
        model.load_state_dict(load_checkpoint(path))
        return model


def copy_model(model):
    twin = CRNN(model.config, np.random.default_rng(0), dtype=model.dtype)
    twin.load_state_dict(model.state_dict())
    return twin
