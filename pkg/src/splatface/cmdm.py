"""Cross-modal feature extraction.

Explicit side: action-unit (AU) intensity vectors split into upper/lower face
sets, a pass-through upper feature, and a residual-enhanced encoder for lower
AUs.  Implicit side: windowed audio embeddings distilled by a shared MLP plus
attention-weighted temporal pooling.  A small projector maps the implicit
feature into the explicit space, supervised by an L1 alignment loss.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat
from .nn import MLP, Linear

# AU ids in fixed ascending order
AU_IDS = (1, 2, 4, 5, 6, 7, 9, 10, 12, 14, 15, 17, 20, 23, 25, 26, 45)
UPPER_AU_IDS = (1, 2, 4, 5, 6, 7, 45)
LOWER_AU_IDS = (9, 10, 12, 14, 15, 17, 20, 23, 25, 26)

UPPER_SLOTS = tuple(AU_IDS.index(i) for i in UPPER_AU_IDS)
LOWER_SLOTS = tuple(AU_IDS.index(i) for i in LOWER_AU_IDS)

AU_MIN, AU_MAX = 0.0, 5.0

AUDIO_DIM = 512
WINDOW = 8
IMPLICIT_DIM = 32
EXPLICIT_LOWER_DIM = 32


def validate_au(au):
    au = np.asarray(au, dtype=np.float64)
    if au.shape[-1] != 17:
        raise ValueError("AU vector must have 17 entries")
    if np.any(au < AU_MIN) or np.any(au > AU_MAX):
        raise ValueError("AU intensities must lie in [0, 5]")
    return au


def partition_aus(au):
    """Split a 17-d AU vector into (upper 7-d, lower 10-d) by AU id."""
    au = validate_au(au)
    return au[..., list(UPPER_SLOTS)], au[..., list(LOWER_SLOTS)]


def encode_upper(upper):
    """Upper AUs pass through unchanged (pure concatenation)."""
    if isinstance(upper, Tensor):
        return upper
    return Tensor(np.asarray(upper, dtype=np.float64))


def audio_window(track, t):
    """8-frame window [t-3, t+4] from a T x 512 track, edges clamped."""
    track = np.asarray(track, dtype=np.float64)
    n = track.shape[0]
    if not 0 <= t < n:
        raise IndexError(f"frame index {t} outside track of length {n}")
    idx = np.clip(np.arange(t - 3, t + 5), 0, n - 1)
    return track[idx]


class LowerEncoder:
    """Residual-enhanced lower-AU encoder: concat(MLP(x) in R^22, x)."""

    def __init__(self, rng):
        self.mlp = MLP(rng, [10, 64, 22], hidden_act="leaky_relu")

    def __call__(self, lower):
        if not isinstance(lower, Tensor):
            lower = Tensor(np.asarray(lower, dtype=np.float64))
        head = self.mlp(lower)
        return concat([head, lower], axis=-1)

    def parameters(self):
        return [(f"mlp.{n}", p) for n, p in self.mlp.parameters()]


class AudioNet:
    """Per-frame embedding 512 -> 128 -> 64, weights shared across frames."""

    def __init__(self, rng):
        self.mlp = MLP(rng, [AUDIO_DIM, 128, 64], hidden_act="leaky_relu")

    def __call__(self, window):
        return self.mlp(window)  # (8, 64)

    def parameters(self):
        return [(f"mlp.{n}", p) for n, p in self.mlp.parameters()]


class AudioAttNet:
    """Temporal pooling: per-frame conv (kernel 3, 64->32) + softmax attention."""

    def __init__(self, rng):
        self.conv = Linear(rng, 3 * 64, 32)      # acts on stacked neighbor frames
        self.score = Linear(rng, 32, 1)

    def __call__(self, emb):
        # same-padding 1d conv over the 8-frame axis via shifted concatenation
        x = emb.data
        n = x.shape[0]
        prev_idx = np.concatenate([[0], np.arange(n - 1)])
        next_idx = np.concatenate([np.arange(1, n), [n - 1]])
        stackd = concat([emb[prev_idx], emb, emb[next_idx]], axis=1)  # (8, 192)
        conv = self.conv(stackd)                                      # (8, 32)
        scores = self.score(conv).reshape(n)                          # (8,)
        w = scores.softmax(axis=-1)
        return w @ conv                                               # (32,)

    def parameters(self):
        out = [(f"conv.{n}", p) for n, p in self.conv.parameters()]
        out += [(f"score.{n}", p) for n, p in self.score.parameters()]
        return out


class AudioToExplicit:
    """Two-layer projector from implicit (32-d) to explicit (32-d) features.

    ReLU hidden, identity output: the target feature contains a signed MLP
    head, so a non-negative output activation could not fit it.
    """

    def __init__(self, rng):
        self.mlp = MLP(rng, [IMPLICIT_DIM, 64, EXPLICIT_LOWER_DIM],
                       hidden_act="relu", final_act="identity")

    def __call__(self, c_implicit):
        return self.mlp(c_implicit)

    def parameters(self):
        return [(f"mlp.{n}", p) for n, p in self.mlp.parameters()]


def align_loss(c_audio_explicit, c_visual_explicit):
    """Mean absolute difference between the two 32-d explicit features."""
    a = c_audio_explicit if isinstance(c_audio_explicit, Tensor) else Tensor(c_audio_explicit)
    b = c_visual_explicit if isinstance(c_visual_explicit, Tensor) else Tensor(c_visual_explicit)
    return (a - b).abs().mean()


class Cmdm:
    """Bundles all cross-modal encoders and their parameters."""

    def __init__(self, rng):
        self.lower_encoder = LowerEncoder(rng)
        self.audio_net = AudioNet(rng)
        self.audio_att = AudioAttNet(rng)
        self.a2e = AudioToExplicit(rng)

    def implicit_feature(self, track, t):
        win = Tensor(audio_window(track, t))
        return self.audio_att(self.audio_net(win))

    def parameters(self):
        out = []
        for prefix, mod in (("lower_encoder", self.lower_encoder),
                            ("audio_net", self.audio_net),
                            ("audio_att", self.audio_att),
                            ("a2e", self.a2e)):
            out += [(f"{prefix}.{n}", p) for n, p in mod.parameters()]
        return out
