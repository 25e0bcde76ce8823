"""Three-stage training loop with deterministic resume.

Stage "static" fits the canonical Gaussian fields to the neutral renders
(no deformation).  Stage "motion" trains the tri-plane encoders, the
cross-modal extractors, the fusion gate, and the motion networks against
per-branch frames with stochastic path selection, fields frozen.  Stage
"finetune" jointly optimizes everything against the blended head frames.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .config import RunConfig
from .hmmm import sample_mask_rate, sample_path, select_pair
from .losses import LossWeights, psnr, total_loss
from .model import (HeadModel, load_model_checkpoint, save_model_checkpoint)
from .optim import Adam, AdamW
from .renderer import blend_head

STAGES = ("static", "motion", "finetune")


class NumericalError(RuntimeError):
    """Raised when a loss or gradient goes non-finite."""


class Trainer:
    def __init__(self, bundle, config: RunConfig, log_path=None):
        config.validate()
        self.bundle = bundle
        self.config = config
        self.model = HeadModel(bundle, config)
        self.weights = LossWeights(config.lambda_dssim, config.lambda_perceptual,
                                   config.lambda_align)
        n = bundle.t_frames
        self.n_train = min(config.train_frames, n) if config.train_frames > 0 else n
        self.rng = np.random.default_rng(np.random.SeedSequence([config.seed, 11]))
        self.opts = {
            "fields": Adam([p for _, p in self.model.field_params()], lr=config.lr),
            "tables": Adam([p for _, p in self.model.table_params()], lr=config.lr),
            "mlps": AdamW([p for _, p in self.model.mlp_params()], lr=config.lr,
                          weight_decay=config.weight_decay),
        }
        self.done = {s: 0 for s in STAGES}
        self.log_path = log_path
        self.records = []
        self._manifest = {"seed": bundle.seed, "config": bundle.config.to_dict()}

    # -- bookkeeping -----------------------------------------------------------

    def _stage_plan(self):
        c = self.config
        return (("static", c.static_iters), ("motion", c.motion_iters),
                ("finetune", c.finetune_iters))

    def global_step(self):
        return sum(self.done.values())

    def _zero_all(self):
        for _, p in self.model.named_parameters():
            p.grad = None

    def _log(self, record):
        self.records.append(record)
        if self.log_path:
            with open(self.log_path, "a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")

    def _check_finite(self, total):
        if not np.all(np.isfinite(total.data)):
            raise NumericalError("non-finite loss at stage %s iter %d" %
                                 (self.current_stage(), self.global_step()))

    def current_stage(self):
        for stage, iters in self._stage_plan():
            if self.done[stage] < iters:
                return stage
        return "done"

    # -- per-stage steps -------------------------------------------------------

    def _term_values(self, terms):
        return {k: float(v.data) for k, v in terms.items()}

    def _static_step(self):
        total = None
        merged = {}
        for branch, target in (("face", self.bundle.neutral_face),
                               ("mouth", self.bundle.neutral_mouth)):
            color, alpha, stats = self.model.render_canonical(branch)
            loss, terms = total_loss(color, target, None, None, self.weights)
            total = loss if total is None else total + loss
            for k, v in self._term_values(terms).items():
                merged[f"{branch}_{k}"] = v
        self._check_finite(total)
        self._zero_all()
        total.backward()
        self.opts["fields"].step()
        self.model.renormalize_quats()
        return {"path": None, "t": None, "total": float(total.data), **merged}

    def _sample_step_inputs(self):
        t = int(self.rng.integers(self.n_train))
        path = sample_path(self.rng, self.config.path_probs)
        mask_rate = None
        if path == "masked":
            mask_rate = sample_mask_rate(self.rng, (self.config.mask_low,
                                                    self.config.mask_high))
        feats = self.model.frame_features(self.bundle.au_traj[t], self.bundle.audio,
                                          t, rng=self.rng, mask_rate=mask_rate)
        c_fused = self.model.fuse(path, feats)
        return t, path, feats, c_fused

    def _alpha_stats(self, path, feats):
        if self.config.fusion_mode == "concat":
            return {"alpha_mean": None, "alpha_min": None, "alpha_max": None}
        c_i, c_e = select_pair(path, feats)
        a = self.model.fusion.alpha(c_i, c_e).data
        return {"alpha_mean": float(np.mean(a)), "alpha_min": float(np.min(a)),
                "alpha_max": float(np.max(a))}

    def _motion_step(self):
        t, path, feats, c_fused = self._sample_step_inputs()
        total = None
        merged = {}
        for branch, frames in (("face", self.bundle.gt_face),
                               ("mouth", self.bundle.gt_mouth)):
            color, alpha, stats, d_mu = self.model.render_branch(
                branch, c_fused, feats["c_e_vu"])
            if branch == "face":
                loss, terms = total_loss(color, frames[t], feats["c_e_al"],
                                         feats["c_e_vl"], self.weights)
            else:
                loss, terms = total_loss(color, frames[t], None, None, self.weights)
            total = loss if total is None else total + loss
            for k, v in self._term_values(terms).items():
                merged[f"{branch}_{k}"] = v
        self._check_finite(total)
        self._zero_all()
        total.backward()
        self.opts["tables"].step()
        self.opts["mlps"].step()
        return {"path": path, "t": t, "total": float(total.data),
                **self._alpha_stats(path, feats), **merged}

    def _finetune_step(self):
        t, path, feats, c_fused = self._sample_step_inputs()
        cf, af, _, _ = self.model.render_branch("face", c_fused, feats["c_e_vu"])
        cm, am, _, _ = self.model.render_branch("mouth", c_fused, feats["c_e_vu"])
        pred = blend_head(cf, af, cm, am, mode=self.config.blend_mode)
        total, terms = total_loss(pred, self.bundle.gt_frames[t], feats["c_e_al"],
                                  feats["c_e_vl"], self.weights)
        self._check_finite(total)
        self._zero_all()
        total.backward()
        for opt in self.opts.values():
            opt.step()
        self.model.renormalize_quats()
        return {"path": path, "t": t, "total": float(total.data),
                **self._alpha_stats(path, feats),
                **self._term_values(terms)}

    _STEP_FNS = {"static": _static_step, "motion": _motion_step,
                 "finetune": _finetune_step}

    # -- driver ----------------------------------------------------------------

    def train(self, max_steps=None):
        """Run pending steps (all stages in order), optionally capped."""
        taken = 0
        for stage, iters in self._stage_plan():
            while self.done[stage] < iters:
                if max_steps is not None and taken >= max_steps:
                    return taken
                record = self._STEP_FNS[stage](self)
                self.done[stage] += 1
                taken += 1
                step_in_stage = self.done[stage]
                if step_in_stage % self.config.log_every == 0 or step_in_stage == iters:
                    self._log({"stage": stage, "iter": step_in_stage,
                               "global_step": self.global_step(), **record})
                ce = self.config.checkpoint_every
                if ce > 0 and self.global_step() % ce == 0 and self.config.out_dir:
                    self.save(os.path.join(self.config.out_dir, "checkpoint.ckpt"))
        return taken

    # -- persistence -----------------------------------------------------------

    def save(self, path):
        opt_states = {name: opt.state_arrays() for name, opt in self.opts.items()}
        stage_state = {s: self.done[s] for s in STAGES}
        header_stage = json.dumps(stage_state, sort_keys=True)
        save_model_checkpoint(path, self.model, self._manifest,
                              stage=header_stage, iteration=self.global_step(),
                              rng_state=self.rng.bit_generator.state,
                              opt_states=opt_states)

    def load(self, path):
        header, opt_states = load_model_checkpoint(path, self.model, self._manifest)
        self.done = {s: int(v) for s, v in json.loads(header["stage"]).items()}
        if header.get("rng_state") is not None:
            self.rng.bit_generator.state = header["rng_state"]
        for name, opt in self.opts.items():
            if name in opt_states:
                opt.load_state_arrays(opt_states[name])
        return header


def final_psnr(trainer: Trainer, frames=None):
    """Training-frame PSNR of image-driven (vanilla path) renders."""
    b = trainer.bundle
    if frames is None:
        frames = range(min(trainer.n_train, b.t_frames))
    vals = []
    for t in frames:
        feats = trainer.model.frame_features(b.au_traj[t], b.audio, t)
        c_fused = trainer.model.fuse("vanilla", feats)
        cf, af, _, _ = trainer.model.render_branch("face", c_fused, feats["c_e_vu"])
        cm, am, _, _ = trainer.model.render_branch("mouth", c_fused, feats["c_e_vu"])
        pred = blend_head(cf, af, cm, am, mode=trainer.config.blend_mode)
        vals.append(psnr(pred.data, b.gt_frames[t]))
    return float(np.mean(vals))
