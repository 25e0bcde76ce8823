"""Full two-branch head model: canonical Gaussian fields, per-branch motion
networks with tri-plane position encodings, and the shared cross-modal
feature extractors and gated fusion.

Parameter registration order is fixed so optimizers and checkpoints are
reproducible across runs.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .cmdm import Cmdm, encode_upper, partition_aus
from .config import RunConfig, config_hash
from .fields import apply_deformation, init_static
from .hmmm import GatedFusion, MotionNet, mask_features, select_pair
from .io_format import FormatError, read_checkpoint, write_checkpoint
from .renderer import rasterize
from .triplane import TriPlaneHash

CKPT_FORMAT_VERSION = 1

BRANCHES = ("face", "mouth")


class HeadModel:
    """All trainable state for one (bundle, config) pair."""

    def __init__(self, bundle, config: RunConfig):
        self.config = config
        self.camera = bundle.camera
        rng = np.random.default_rng(np.random.SeedSequence([config.init_seed, 7]))
        self.fields = {
            "face": init_static(bundle.face_geom, np.random.SeedSequence([config.init_seed, 1]),
                                branch_tag="face", sh_degree=config.sh_degree),
            "mouth": init_static(bundle.mouth_geom, np.random.SeedSequence([config.init_seed, 2]),
                                 branch_tag="mouth", sh_degree=config.sh_degree),
        }
        self.triplanes = {b: TriPlaneHash(rng) for b in BRANCHES}
        self.cmdm = Cmdm(rng)
        self.fusion = GatedFusion(rng, gate_mode=config.internal_gate_mode())
        self.motion = {b: MotionNet(rng) for b in BRANCHES}

    # -- parameter groups -------------------------------------------------

    def field_params(self):
        out = []
        for b in BRANCHES:
            out += [(f"{b}_field.{n}", p) for n, p in self.fields[b].parameters()]
        return out

    def table_params(self):
        out = []
        for b in BRANCHES:
            out += [(f"{b}_triplane.{n}", p) for n, p in self.triplanes[b].parameters()]
        return out

    def mlp_params(self):
        out = [(f"cmdm.{n}", p) for n, p in self.cmdm.parameters()]
        out += [(f"fusion.{n}", p) for n, p in self.fusion.parameters()]
        for b in BRANCHES:
            out += [(f"{b}_motion.{n}", p) for n, p in self.motion[b].parameters()]
        return out

    def named_parameters(self):
        return self.field_params() + self.table_params() + self.mlp_params()

    def set_fields_trainable(self, flag):
        for _, p in self.field_params():
            p.requires_grad = bool(flag)

    def renormalize_quats(self):
        for b in BRANCHES:
            self.fields[b].renormalize_quats()

    # -- feature extraction -------------------------------------------------

    def frame_features(self, au, audio_track, t, rng=None, mask_rate=None):
        """All conditioning features for one frame.

        Keys: c_e_vu (7-d upper AUs), c_e_vl (32-d visual-explicit lower),
        c_i_al (32-d audio-implicit), c_e_al (32-d audio-explicit from the
        projector), and c_i_al_mask when a mask rate and rng are supplied.
        """
        upper, lower = partition_aus(au)
        c_i_al = self.cmdm.implicit_feature(audio_track, t)
        feats = {
            "c_e_vu": encode_upper(upper),
            "c_e_vl": self.cmdm.lower_encoder(lower),
            "c_i_al": c_i_al,
            "c_e_al": self.cmdm.a2e(c_i_al),
            "c_i_al_mask": None,
        }
        if mask_rate is not None:
            if rng is None:
                raise ValueError("masking requires an RNG")
            feats["c_i_al_mask"] = mask_features(c_i_al, mask_rate, rng)
        return feats

    def fuse(self, path, feats):
        c_i, c_e = select_pair(path, feats)
        return self.fusion(c_i, c_e)

    # -- rendering ------------------------------------------------------------

    def render_canonical(self, branch):
        """Stage-1 render of the undeformed field for one branch."""
        f = self.fields[branch]
        return rasterize(f.mu, f.log_scales, f.quats, f.alpha_logit, f.features,
                         self.camera, sh_degree=self.config.sh_degree)

    def branch_deformation(self, branch, c_fused, c_e_vu):
        """Per-primitive (d_mu, d_s, d_q) for one branch."""
        f = self.fields[branch]
        h = self.triplanes[branch].encode(f.mu)
        c_f_mod, c_u_mod = self.motion[branch].region_attention(h, c_fused, c_e_vu)
        return self.motion[branch].predict_deformation(h, c_u_mod, c_f_mod)

    def render_branch(self, branch, c_fused, c_e_vu):
        """Deformed render; returns (color, alpha, stats, d_mu)."""
        f = self.fields[branch]
        d_mu, d_s, d_q = self.branch_deformation(branch, c_fused, c_e_vu)
        mu_p, s_p, q_p = apply_deformation(f, d_mu, d_s, d_q)
        color, alpha, stats = rasterize(mu_p, s_p, q_p, f.alpha_logit, f.features,
                                        self.camera, sh_degree=self.config.sh_degree)
        return color, alpha, stats, d_mu

    # -- checkpoint state -------------------------------------------------------

    def state_arrays(self):
        return {f"param.{n}": p.data.copy() for n, p in self.named_parameters()}

    def load_state_arrays(self, arrays):
        for n, p in self.named_parameters():
            key = f"param.{n}"
            if key not in arrays:
                raise FormatError(f"checkpoint missing parameter {n}")
            if arrays[key].shape != p.data.shape:
                raise FormatError(f"checkpoint parameter {n} has shape "
                                  f"{arrays[key].shape}, expected {p.data.shape}")
            p.data = arrays[key].copy()


# -- checkpoint files ----------------------------------------------------------

def model_hash(config: RunConfig, bundle_manifest: dict):
    return config_hash(config.structural_dict(), bundle_manifest)


def save_model_checkpoint(path, model: HeadModel, bundle_manifest: dict,
                          stage, iteration, rng_state=None, opt_states=None):
    header = {
        "format_version": CKPT_FORMAT_VERSION,
        "stage": stage,
        "iteration": int(iteration),
        "config_hash": model_hash(model.config, bundle_manifest),
        "config": model.config.to_dict(),
        "rng_state": rng_state,
    }
    arrays = dict(model.state_arrays())
    for name, state in (opt_states or {}).items():
        for k, v in state.items():
            arrays[f"opt.{name}.{k}"] = v
    write_checkpoint(path, header, arrays)


def load_model_checkpoint(path, model: HeadModel, bundle_manifest: dict):
    """Restore parameters in place; returns (header, optimizer-state arrays)."""
    header, arrays = read_checkpoint(path)
    if header.get("format_version") != CKPT_FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint format version "
                          f"{header.get('format_version')}")
    expect = model_hash(model.config, bundle_manifest)
    if header.get("config_hash") != expect:
        raise FormatError("checkpoint config hash %s does not match run hash %s"
                          % (header.get("config_hash"), expect))
    model.load_state_arrays(arrays)
    opt_states = {}
    for k, v in arrays.items():
        if k.startswith("opt."):
            _, name, key = k.split(".", 2)
            opt_states.setdefault(name, {})[key] = v
    return header, opt_states
