"""Deterministic synthetic articulation benchmark.

A head of Gaussian primitives on an ellipsoid plus a mouth cavity, driven by
an analytic linear rig: each action unit displaces its region's primitives
proportionally to intensity.  Audio features are a fixed linear embedding of
the lower AUs plus smooth nuisance channels and small noise, so the lower
AUs are recoverable from audio by linear regression -- that recoverability
bound is the external oracle for the cross-modal projector.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .camera import Camera, default_camera
from .cmdm import AU_IDS, LOWER_SLOTS, UPPER_SLOTS
from .fields import GeometrySpec
from .io_format import read_array, write_array, write_png
from .renderer import blend_head, rasterize

N_LANDMARKS = 20
AUDIO_DIM = 512
LATENT_DIM = 16
NOISE_SIGMA = 0.01


@dataclass
class SceneConfig:
    t_frames: int = 500
    width: int = 64
    height: int = 64
    n_face: int = 2000
    n_mouth: int = 200
    blend_mode: str = "as-written"
    noise_sigma: float = NOISE_SIGMA
    fps: float = 25.0

    def to_dict(self):
        return {
            "t_frames": self.t_frames, "width": self.width, "height": self.height,
            "n_face": self.n_face, "n_mouth": self.n_mouth,
            "blend_mode": self.blend_mode, "noise_sigma": self.noise_sigma,
            "fps": self.fps,
        }


# -- AU trajectories ----------------------------------------------------------

def gen_au_traj(seed, t_frames):
    """Per-channel sums of three random-phase sinusoids scaled into [0, 5].

    The jaw/lip-part channels (AU25, AU26) carry the largest amplitude.
    """
    if t_frames < 8:
        raise ValueError("need at least 8 frames")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    t = np.arange(t_frames)
    traj = np.zeros((t_frames, 17))
    big = {AU_IDS.index(25), AU_IDS.index(26)}
    for ch in range(17):
        sig = np.zeros(t_frames)
        for _ in range(3):
            period = rng.uniform(20.0, 80.0)
            phase = rng.uniform(0.0, 2 * np.pi)
            amp = rng.uniform(0.5, 1.0)
            sig += amp * np.sin(2 * np.pi * t / period + phase)
        lo, hi = sig.min(), sig.max()
        unit = (sig - lo) / (hi - lo) if hi > lo else np.zeros(t_frames)
        top = 1.8 if ch in big else 0.6
        traj[:, ch] = unit * top
    return traj


# -- audio features -----------------------------------------------------------

def _audio_maps(seed):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 202]))
    mix = rng.normal(size=(10, 10)) * 0.3 + np.eye(10)   # invertible lower-AU mix
    # 0.32 keeps the held-out ridge oracle below 0.05 AU units
    embed = rng.normal(size=(AUDIO_DIM, LATENT_DIM)) * 0.32 / np.sqrt(LATENT_DIM)
    return mix, embed


def gen_audio_features(au_traj, seed, noise_sigma=NOISE_SIGMA):
    """T x 512 embedding of a latent that mixes the lower AUs plus nuisance."""
    au_traj = np.asarray(au_traj, dtype=np.float64)
    t_frames = au_traj.shape[0]
    mix, embed = _audio_maps(seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 303]))
    lower = au_traj[:, list(LOWER_SLOTS)]
    latent = np.zeros((t_frames, LATENT_DIM))
    latent[:, :10] = lower @ mix.T
    t = np.arange(t_frames)
    for k in range(10, LATENT_DIM):
        period = rng.uniform(25.0, 70.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        latent[:, k] = np.sin(2 * np.pi * t / period + phase)
    noise = rng.normal(size=(t_frames, AUDIO_DIM)) * noise_sigma
    return latent @ embed.T + noise


def audio_recovery_mae(audio, au_traj, ridge=1e-2):
    """Ridge-regression oracle: recover lower AUs from audio features.

    Fits on the first half of the frames and reports the mean absolute
    recovery error on the held-out second half, so the number reflects
    generalization rather than interpolation (512 features can interpolate
    a few hundred frames exactly).  This bounds what a well-calibrated
    audio-to-AU projector should achieve on this data.
    """
    audio = np.asarray(audio, dtype=np.float64)
    lower = np.asarray(au_traj, dtype=np.float64)[:, list(LOWER_SLOTS)]
    if audio.shape[0] != lower.shape[0]:
        raise ValueError("audio and AU trajectory lengths differ")
    if audio.shape[0] < 4:
        raise ValueError("need at least 4 frames for the recovery oracle")
    n_fit = audio.shape[0] // 2
    x = np.concatenate([audio, np.ones((audio.shape[0], 1))], axis=1)
    a = x[:n_fit].T @ x[:n_fit] + ridge * np.eye(x.shape[1])
    w = np.linalg.solve(a, x[:n_fit].T @ lower[:n_fit])
    pred = x[n_fit:] @ w
    return float(np.abs(pred - lower[n_fit:]).mean())


# -- geometry and rig ---------------------------------------------------------

FACE_RADII = np.array([0.65, 0.85, 0.65])
MOUTH_CENTER_Y = -0.38

SKIN = np.array([0.80, 0.62, 0.52])
BROW = np.array([0.35, 0.25, 0.20])
LIP = np.array([0.72, 0.30, 0.30])
EYE = np.array([0.25, 0.25, 0.30])
MOUTH_INTERIOR = np.array([0.40, 0.12, 0.12])


def _face_regions(mu):
    x, y, z = mu[:, 0], mu[:, 1], mu[:, 2]
    front = z > 0.2
    brow = front & (y > 0.20) & (y < 0.48) & (np.abs(x) < 0.45)
    eye = front & (y > 0.02) & (y <= 0.20) & (np.abs(x) > 0.06) & (np.abs(x) < 0.42)
    lip = front & (np.abs(y - MOUTH_CENTER_Y) < 0.14) & (np.abs(x) < 0.32)
    chin = front & (y < -0.55)
    other = ~(brow | eye | lip | chin)
    return {"brow": brow, "eye": eye, "lip": lip, "chin": chin, "other": other}


def _build_face_geometry(seed, n_face):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 404]))
    d = rng.normal(size=(n_face, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    radial = rng.uniform(0.97, 1.0, size=(n_face, 1))
    mu = d * FACE_RADII * radial
    regions = _face_regions(mu)
    base_scale = 1.4 * np.sqrt(4.3 / (np.pi * n_face))
    scales = np.full((n_face, 3), base_scale) * rng.uniform(0.85, 1.15, size=(n_face, 1))
    colors = np.tile(SKIN, (n_face, 1))
    colors[regions["brow"]] = BROW
    colors[regions["eye"]] = EYE
    colors[regions["lip"]] = LIP
    colors += rng.uniform(-0.02, 0.02, size=(n_face, 3))
    opacity = np.full(n_face, 0.9)
    return GeometrySpec(mu=mu, scales=scales, colors=np.clip(colors, 0, 1),
                        opacity=opacity), regions


def _build_mouth_geometry(seed, n_mouth):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 505]))
    mu = np.stack([
        rng.uniform(-0.24, 0.24, size=n_mouth),
        rng.uniform(MOUTH_CENTER_Y - 0.12, MOUTH_CENTER_Y + 0.10, size=n_mouth),
        rng.uniform(0.30, 0.50, size=n_mouth),
    ], axis=1)
    base_scale = 1.4 * np.sqrt(0.25 / (np.pi * n_mouth))
    scales = np.full((n_mouth, 3), base_scale) * rng.uniform(0.85, 1.15, size=(n_mouth, 1))
    colors = np.tile(MOUTH_INTERIOR, (n_mouth, 1)) + rng.uniform(-0.02, 0.02, size=(n_mouth, 3))
    opacity = np.full(n_mouth, 0.85)
    return GeometrySpec(mu=mu, scales=scales, colors=np.clip(colors, 0, 1),
                        opacity=opacity)


def _face_rig(mu, regions):
    """N x 3 x 17 linear basis: displacement per unit AU intensity.

    Upper AUs touch only brow/eye primitives, lower AUs only lip/chin ones.
    """
    n = mu.shape[0]
    basis = np.zeros((n, 3, 17))
    x = mu[:, 0]
    y = mu[:, 1]
    brow, eye, lip, chin = (regions[k] for k in ("brow", "eye", "lip", "chin"))
    upper_lip = lip & (y > MOUTH_CENTER_Y)
    lower_lip = lip & (y <= MOUTH_CENTER_Y)
    corner = lip & (np.abs(x) > 0.16)
    sx = np.sign(x)

    def add(au_id, mask, vec_fn):
        slot = AU_IDS.index(au_id)
        idx = np.flatnonzero(mask)
        basis[idx, :, slot] += vec_fn(idx)

    const = lambda v: (lambda idx: np.tile(v, (len(idx), 1)))
    # upper face
    add(1, brow, const([0.0, 0.015, 0.0]))
    add(2, brow, const([0.0, 0.012, 0.0]))
    add(4, brow, const([0.0, -0.015, 0.0]))
    add(5, eye, const([0.0, 0.010, 0.0]))
    add(6, eye, const([0.0, 0.008, 0.0]))
    add(7, eye, const([0.0, -0.008, 0.0]))
    add(45, eye, const([0.0, -0.012, 0.0]))
    # lower face
    add(9, upper_lip, const([0.0, 0.008, 0.0]))
    add(10, upper_lip, const([0.0, 0.010, 0.0]))
    add(12, lip, lambda idx: np.stack([0.012 * sx[idx], np.full(len(idx), 0.006),
                                       np.zeros(len(idx))], axis=1))
    add(14, corner, lambda idx: np.stack([0.008 * sx[idx], np.zeros(len(idx)),
                                          np.zeros(len(idx))], axis=1))
    add(15, corner, const([0.0, -0.010, 0.0]))
    add(17, chin, const([0.0, 0.010, 0.0]))
    add(20, lip, lambda idx: np.stack([0.010 * sx[idx], np.zeros(len(idx)),
                                       np.zeros(len(idx))], axis=1))
    add(23, lip, lambda idx: np.stack([-0.008 * sx[idx], np.zeros(len(idx)),
                                       np.zeros(len(idx))], axis=1))
    add(25, lower_lip, const([0.0, -0.030, 0.0]))
    add(25, upper_lip, const([0.0, 0.012, 0.0]))
    add(25, chin, const([0.0, -0.020, 0.0]))
    add(26, lower_lip, const([0.0, -0.025, 0.0]))
    add(26, chin, const([0.0, -0.040, 0.0]))
    return basis


def _mouth_rig(mu):
    n = mu.shape[0]
    basis = np.zeros((n, 3, 17))
    basis[:, 1, AU_IDS.index(25)] = -0.015
    basis[:, 1, AU_IDS.index(26)] = -0.030
    return basis


def _pick_landmarks(mu, regions):
    """4 brow, 4 eye, 8 lip, 4 jaw primitives nearest to target points."""
    targets = []
    for xt in (-0.30, -0.12, 0.12, 0.30):
        targets.append(("brow", np.array([xt, 0.32, 0.5])))
    for xt in (-0.28, -0.14, 0.14, 0.28):
        targets.append(("eye", np.array([xt, 0.12, 0.5])))
    for xt, yt in ((-0.26, MOUTH_CENTER_Y), (-0.12, MOUTH_CENTER_Y + 0.10),
                   (0.0, MOUTH_CENTER_Y + 0.10), (0.12, MOUTH_CENTER_Y + 0.10),
                   (0.26, MOUTH_CENTER_Y), (-0.12, MOUTH_CENTER_Y - 0.10),
                   (0.0, MOUTH_CENTER_Y - 0.11), (0.12, MOUTH_CENTER_Y - 0.10)):
        targets.append(("lip", np.array([xt, yt, 0.55])))
    for xt in (-0.24, -0.08, 0.08, 0.24):
        targets.append(("chin", np.array([xt, -0.62, 0.35])))
    chosen = []
    for region, tgt in targets:
        cand = np.flatnonzero(regions[region])
        if cand.size == 0:
            cand = np.arange(mu.shape[0])
        d = np.linalg.norm(mu[cand] - tgt, axis=1)
        order = np.argsort(d, kind="stable")
        pick = next((cand[i] for i in order if cand[i] not in chosen), cand[order[0]])
        chosen.append(int(pick))
    return np.array(chosen, dtype=np.int64)


def project_points(pts, camera: Camera):
    pc = camera.world_to_cam(np.asarray(pts, dtype=np.float64))
    return np.stack([camera.fx * pc[..., 0] / pc[..., 2] + camera.cx,
                     camera.fy * pc[..., 1] / pc[..., 2] + camera.cy], axis=-1)


# -- scene bundle -------------------------------------------------------------

@dataclass
class SceneBundle:
    config: SceneConfig
    seed: int
    camera: Camera
    au_traj: np.ndarray          # T x 17
    audio: np.ndarray            # T x 512
    face_geom: GeometrySpec
    mouth_geom: GeometrySpec
    face_rig: np.ndarray         # N x 3 x 17
    mouth_rig: np.ndarray
    landmark_idx: np.ndarray     # 20 face-primitive indices
    landmarks: np.ndarray        # T x 20 x 2 (pixels)
    gt_frames: np.ndarray        # T x H x W x 3 (blended head)
    gt_face: np.ndarray          # T x H x W x 3
    gt_mouth: np.ndarray
    neutral_face: np.ndarray     # H x W x 3
    neutral_mouth: np.ndarray
    regions: dict = field(default_factory=dict)

    @property
    def t_frames(self):
        return self.config.t_frames

    def landmark_basis(self):
        """(20*3) x 17 rig basis restricted to landmark primitives."""
        return self.face_rig[self.landmark_idx].reshape(-1, 17)

    def estimate_aus_from_displacement(self, lm_disp):
        """Least-squares AU estimate from 3-d landmark displacements (T x 20 x 3)."""
        b = self.landmark_basis()
        sol, *_ = np.linalg.lstsq(b, np.asarray(lm_disp).reshape(-1, 60).T, rcond=None)
        return sol.T


def _render_oracle(geom, rig, au, camera):
    disp = np.einsum("nck,k->nc", rig, au)
    mu = geom.mu + disp
    n = mu.shape[0]
    log_scales = np.log(geom.scales)
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    op = np.clip(geom.opacity, 1e-6, 1 - 1e-6)
    alpha_logit = np.log(op / (1 - op)).reshape(n, 1)
    from .fields import SH_C0
    features = (geom.colors - 0.5) / SH_C0
    color, alpha, _ = rasterize(mu, log_scales, quats, alpha_logit, features, camera)
    return color.data, alpha.data


def gen_scene(seed, config: SceneConfig = None):
    """Build the full benchmark bundle deterministically from (seed, config)."""
    config = config or SceneConfig()
    if config.t_frames < 8 or config.n_face < 1 or config.n_mouth < 1:
        raise ValueError("invalid scene config")
    au_traj = gen_au_traj(seed, config.t_frames)
    audio = gen_audio_features(au_traj, seed, config.noise_sigma)
    face_geom, regions = _build_face_geometry(seed, config.n_face)
    mouth_geom = _build_mouth_geometry(seed, config.n_mouth)
    face_rig = _face_rig(face_geom.mu, regions)
    mouth_rig = _mouth_rig(mouth_geom.mu)
    landmark_idx = _pick_landmarks(face_geom.mu, regions)
    camera = default_camera(config.width, config.height)

    t_frames = config.t_frames
    h, w = config.height, config.width
    gt_frames = np.zeros((t_frames, h, w, 3))
    gt_face = np.zeros((t_frames, h, w, 3))
    gt_mouth = np.zeros((t_frames, h, w, 3))
    landmarks = np.zeros((t_frames, N_LANDMARKS, 2))
    for t in range(t_frames):
        au = au_traj[t]
        cf, af = _render_oracle(face_geom, face_rig, au, camera)
        cm, am = _render_oracle(mouth_geom, mouth_rig, au, camera)
        gt_face[t] = cf
        gt_mouth[t] = cm
        gt_frames[t] = blend_head(cf, af, cm, am, mode=config.blend_mode).data
        disp = np.einsum("nck,k->nc", face_rig[landmark_idx], au)
        landmarks[t] = project_points(face_geom.mu[landmark_idx] + disp, camera)
    neutral_face, _ = _render_oracle(face_geom, face_rig, np.zeros(17), camera)
    neutral_mouth, _ = _render_oracle(mouth_geom, mouth_rig, np.zeros(17), camera)

    return SceneBundle(config=config, seed=seed, camera=camera, au_traj=au_traj,
                       audio=audio, face_geom=face_geom, mouth_geom=mouth_geom,
                       face_rig=face_rig, mouth_rig=mouth_rig,
                       landmark_idx=landmark_idx, landmarks=landmarks,
                       gt_frames=gt_frames, gt_face=gt_face, gt_mouth=gt_mouth,
                       neutral_face=neutral_face, neutral_mouth=neutral_mouth,
                       regions=regions)


# -- persistence --------------------------------------------------------------

def save_bundle(bundle: SceneBundle, path, write_pngs=True):
    os.makedirs(path, exist_ok=True)
    manifest = {
        "format": "splatface-bundle",
        "version": 1,
        "seed": bundle.seed,
        "config": bundle.config.to_dict(),
    }
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    arrays = {
        "au_traj": bundle.au_traj, "audio": bundle.audio,
        "landmarks": bundle.landmarks,
        "landmark_idx": bundle.landmark_idx.astype(np.float64),
        "face_mu": bundle.face_geom.mu, "face_scales": bundle.face_geom.scales,
        "face_colors": bundle.face_geom.colors, "face_opacity": bundle.face_geom.opacity,
        "mouth_mu": bundle.mouth_geom.mu, "mouth_scales": bundle.mouth_geom.scales,
        "mouth_colors": bundle.mouth_geom.colors, "mouth_opacity": bundle.mouth_geom.opacity,
        "face_rig": bundle.face_rig, "mouth_rig": bundle.mouth_rig,
        "gt_frames": bundle.gt_frames, "gt_face": bundle.gt_face,
        "gt_mouth": bundle.gt_mouth,
        "neutral_face": bundle.neutral_face, "neutral_mouth": bundle.neutral_mouth,
    }
    for name, arr in arrays.items():
        write_array(os.path.join(path, name + ".hmtk"), arr)
    if write_pngs:
        frames_dir = os.path.join(path, "frames")
        os.makedirs(frames_dir, exist_ok=True)
        for t in range(bundle.t_frames):
            write_png(os.path.join(frames_dir, f"frame_{t:05d}.png"), bundle.gt_frames[t])


def load_bundle(path):
    with open(os.path.join(path, "manifest.json")) as f:
        manifest = json.load(f)
    if manifest.get("format") != "splatface-bundle":
        raise ValueError("not a scene bundle directory")
    config = SceneConfig(**manifest["config"])
    arr = lambda name: read_array(os.path.join(path, name + ".hmtk"))
    face_geom = GeometrySpec(mu=arr("face_mu"), scales=arr("face_scales"),
                             colors=arr("face_colors"), opacity=arr("face_opacity"))
    mouth_geom = GeometrySpec(mu=arr("mouth_mu"), scales=arr("mouth_scales"),
                              colors=arr("mouth_colors"), opacity=arr("mouth_opacity"))
    regions = _face_regions(face_geom.mu)
    return SceneBundle(config=config, seed=manifest["seed"],
                       camera=default_camera(config.width, config.height),
                       au_traj=arr("au_traj"), audio=arr("audio"),
                       face_geom=face_geom, mouth_geom=mouth_geom,
                       face_rig=arr("face_rig"), mouth_rig=arr("mouth_rig"),
                       landmark_idx=arr("landmark_idx").astype(np.int64),
                       landmarks=arr("landmarks"), gt_frames=arr("gt_frames"),
                       gt_face=arr("gt_face"), gt_mouth=arr("gt_mouth"),
                       neutral_face=arr("neutral_face"), neutral_mouth=arr("neutral_mouth"),
                       regions=regions)
