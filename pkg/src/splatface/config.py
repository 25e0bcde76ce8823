"""Run configuration: defaults, TOML parsing, validation, and hashing."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

GATE_MODES = ("vector", "scalar", "pure-explicit", "pure-implicit")  # plus fixed-alpha:<x>
FUSION_MODES = ("gate", "concat")
BLEND_MODES = ("as-written", "face-complement")

PAPER_MOTION_ITERS = 50000
PAPER_FINETUNE_ITERS = 15000


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    bundle_dir: str = ""
    out_dir: str = "run"
    static_iters: int = 500
    motion_iters: int = 5000
    finetune_iters: int = 1500
    lr: float = 5e-4
    weight_decay: float = 1e-2
    lambda_dssim: float = 0.2
    lambda_perceptual: float = 0.5
    lambda_align: float = 1e-3
    path_probs: tuple = (0.4, 0.4, 0.2)
    mask_low: float = 0.1
    mask_high: float = 0.3
    gate_mode: str = "vector"        # vector | scalar | fixed-alpha:<x> | pure-explicit | pure-implicit
    fusion_mode: str = "gate"        # gate | concat
    blend_mode: str = "as-written"
    sh_degree: int = 0
    train_frames: int = 0            # 0 = use every bundle frame for training
    seed: int = 0                    # training RNG (sampling, masking)
    init_seed: int = 1               # parameter initialization RNG
    threads: int = 0                 # 0 = leave the numba default
    log_every: int = 1
    checkpoint_every: int = 0        # 0 = only final checkpoints
    extra: dict = field(default_factory=dict)

    def validate(self):
        if min(self.static_iters, self.motion_iters, self.finetune_iters) < 0:
            raise ConfigError("iteration counts must be non-negative")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be non-negative")
        if min(self.lambda_dssim, self.lambda_perceptual, self.lambda_align) < 0:
            raise ConfigError("loss weights must be non-negative")
        probs = tuple(float(p) for p in self.path_probs)
        if len(probs) != 3 or min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-9:
            raise ConfigError("path probabilities must be 3 non-negative values summing to 1")
        self.path_probs = probs
        if not (0.0 <= self.mask_low <= self.mask_high <= 1.0):
            raise ConfigError("mask range must satisfy 0 <= low <= high <= 1")
        if self.gate_mode not in GATE_MODES and not self.gate_mode.startswith("fixed-alpha:"):
            raise ConfigError(f"unknown gate mode {self.gate_mode!r}")
        if self.gate_mode.startswith("fixed-alpha:"):
            try:
                a = float(self.gate_mode.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad fixed-alpha value in {self.gate_mode!r}") from None
            if not 0.0 <= a <= 1.0:
                raise ConfigError("fixed alpha must lie in [0, 1]")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"unknown fusion mode {self.fusion_mode!r}")
        if self.blend_mode not in BLEND_MODES:
            raise ConfigError(f"unknown blend mode {self.blend_mode!r}")
        if self.sh_degree not in (0, 1):
            raise ConfigError("sh_degree must be 0 or 1")
        if self.train_frames < 0:
            raise ConfigError("train_frames must be non-negative")
        if self.log_every < 1:
            raise ConfigError("log_every must be at least 1")
        return self

    def internal_gate_mode(self):
        """Map the user-facing gate/fusion choice to the fusion module's mode."""
        if self.fusion_mode == "concat":
            return "concat"
        if self.gate_mode == "pure-explicit":
            return "fixed:1.0"
        if self.gate_mode == "pure-implicit":
            return "fixed:0.0"
        if self.gate_mode.startswith("fixed-alpha:"):
            return "fixed:" + self.gate_mode.split(":", 1)[1]
        return self.gate_mode

    def apply_paper_scale(self):
        self.motion_iters = PAPER_MOTION_ITERS
        self.finetune_iters = PAPER_FINETUNE_ITERS
        return self

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def structural_dict(self):
        """The fields that must match between a checkpoint and its consumer."""
        keys = ("gate_mode", "fusion_mode", "blend_mode", "sh_degree", "init_seed")
        return {k: getattr(self, k) for k in keys}


def config_hash(structural: dict, bundle_manifest: dict = None):
    """Short stable hash binding a checkpoint to config structure and data."""
    payload = {"config": structural, "bundle": bundle_manifest or {}}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def default_config_toml():
    cfg = RunConfig()
    lines = ["# full run configuration with default values"]
    for f in fields(cfg):
        if f.name == "extra":
            continue
        v = getattr(cfg, f.name)
        if isinstance(v, str):
            lines.append(f'{f.name} = "{v}"')
        elif isinstance(v, bool):
            lines.append(f"{f.name} = {str(v).lower()}")
        elif isinstance(v, tuple):
            lines.append(f"{f.name} = [{', '.join(repr(float(x)) for x in v)}]")
        else:
            lines.append(f"{f.name} = {v!r}")
    return "\n".join(lines) + "\n"


def load_config(path=None, overrides=None):
    """Build a validated RunConfig from defaults, a TOML file, and overrides."""
    cfg = RunConfig()
    known = {f.name for f in fields(cfg)}
    if path is not None:
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"bad TOML in {path}: {e}") from None
        for k, v in data.items():
            if k not in known or k == "extra":
                raise ConfigError(f"unknown config key {k!r}")
            if isinstance(getattr(cfg, k), tuple):
                v = tuple(v)
            setattr(cfg, k, v)
    for k, v in (overrides or {}).items():
        if v is not None:
            setattr(cfg, k, v)
    return cfg.validate()
