"""Two-stage training: estimator pretraining, then joint optimization.

Patch protocol: crop stride-aligned oversized HR windows, degrade them with
a freshly sampled (kernel width, noise level) pair, keep the central crop as
the HR target and the degraded field as the LR input.  The window margin
absorbs the blur boundary, and the whole window is kept on the sample so the
degradation can be replayed bit-exactly and consistency identities checked.

Data sampling is stateless: iteration i derives its RNG from (seed, i), so
training resumes mid-run with a bit-identical continuation.
"""

import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from scipy.fft import next_fast_len

from .degradation import KERNEL_SIZE, degrade_lightfield, sample_degradation
from .lightfield import LightField, augment_field, crop_patch
from .restoration import (
    RestorationConfig,
    RestorationNetwork,
    bicubic_up_field,
    torch_resize,
)
from .serialization import load_blob, save_blob

CHECKPOINT_FORMAT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    hr_patch: int = 152
    hr_crop: int = 128
    stride: int = 32
    batch_size: int = 8
    alpha: int = 4
    pretrain_iters: int = 30_000
    total_iters: int = 100_000
    base_lr: float = 2e-4
    lr_decay: float = 0.5
    lr_decay_every: int = 30_000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    sigma_range: tuple = (0.0, 4.0)
    noise_range: tuple = (0.0, 75.0)
    seed: int = 0
    w_de: float = 1.0
    grad_clip: float = 1.0
    augment: bool = True
    log_every: int = 100
    checkpoint_every: int = 5_000

    def __post_init__(self):
        if not 0 < self.lr_decay <= 1:
            raise ValueError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.hr_crop % self.alpha:
            raise ValueError(f"hr_crop {self.hr_crop} not divisible by alpha {self.alpha}")
        if self.margin * 2 + self.hr_crop != self.hr_patch:
            raise ValueError("hr_patch minus hr_crop must leave an even margin")
        if self.margin < (KERNEL_SIZE - 1) // 2:
            raise ValueError(
                f"margin {self.margin} cannot absorb the blur radius {(KERNEL_SIZE - 1) // 2}"
            )

    @property
    def margin(self):
        return (self.hr_patch - self.hr_crop) // 2


# Scaled-down preset for desktop-CPU runs; 'paper' keeps the full protocol.
PRESETS = {
    "desk": (
        replace(
            TrainConfig(),
            batch_size=2,
            pretrain_iters=500,
            total_iters=2_000,
            checkpoint_every=500,
        ),
        RestorationConfig(n1=2, feature_channels=16, kernel_embed_dim=16, num_rcab=1),
    ),
    "paper": (TrainConfig(), RestorationConfig()),
}


@dataclass
class PatchSample:
    hr: LightField
    lr: LightField
    record: object
    hr_padded: LightField
    augmented: bool = False


def lr_at(cfg, iteration):
    """Closed-form step-decay schedule."""
    return cfg.base_lr * cfg.lr_decay ** (iteration // cfg.lr_decay_every)


def sample_patch(scene, rng, cfg):
    """Cut one degraded training pair out of a scene."""
    hh, ww = scene.spatial_shape
    if hh < cfg.hr_patch or ww < cfg.hr_patch:
        raise ValueError(f"scene spatial {hh}x{ww} smaller than patch size {cfg.hr_patch}")
    tops = range(0, hh - cfg.hr_patch + 1, cfg.stride)
    lefts = range(0, ww - cfg.hr_patch + 1, cfg.stride)
    top = tops[rng.integers(len(tops))]
    left = lefts[rng.integers(len(lefts))]
    window = crop_patch(scene, top, left, (cfg.hr_patch, cfg.hr_patch))
    dcfg = sample_degradation(rng, cfg.sigma_range, cfg.noise_range, cfg.alpha)
    lr, record = degrade_lightfield(window, dcfg, margin=cfg.margin)
    hr = crop_patch(window, cfg.margin, cfg.margin, (cfg.hr_crop, cfg.hr_crop))
    return PatchSample(hr=hr, lr=lr, record=record, hr_padded=window)


def augment_sample(sample, rng):
    """Random flips / rotation / channel shuffle, applied jointly.

    The stored noise record is invalidated by any geometric or color op, so
    the sample is flagged; consistency-at-truth checks skip flagged samples.
    """
    ops = []
    if rng.random() < 0.5:
        ops.append(("hflip", None))
    if rng.random() < 0.5:
        ops.append(("vflip", None))
    if rng.random() < 0.5:
        ops.append(("rot90", None))
    if rng.random() < 0.5:
        perm = tuple(int(i) for i in rng.permutation(3))
        ops.append(("channel_shuffle", perm))
    if not ops:
        return sample
    fields = [sample.hr, sample.lr, sample.hr_padded]
    for op, perm in ops:
        fields = [augment_field(f, op, perm) for f in fields]
    return PatchSample(
        hr=fields[0], lr=fields[1], record=sample.record, hr_padded=fields[2], augmented=True
    )


def iteration_rng(seed, iteration):
    return np.random.default_rng(np.random.SeedSequence((seed, iteration)))


def sample_batch(scenes, cfg, iteration):
    """The batch for one iteration, a pure function of (scenes, cfg, iteration)."""
    rng = iteration_rng(cfg.seed, iteration)
    batch = []
    for _ in range(cfg.batch_size):
        scene = scenes[rng.integers(len(scenes))]
        sample = sample_patch(scene, rng, cfg)
        if cfg.augment:
            sample = augment_sample(sample, rng)
        batch.append(sample)
    return batch


def _stack_fields(fields, dtype):
    arr = np.stack([np.transpose(f.data, (0, 1, 4, 2, 3)) for f in fields])
    return torch.from_numpy(arr).to(dtype)


def batch_tensors(batch, alpha, dtype=torch.float32):
    """Stack PatchSamples into the tensors the model and losses consume."""
    bic = np.stack([bicubic_up_field(s.lr.data, alpha) for s in batch])
    bic_up = torch.from_numpy(np.ascontiguousarray(np.transpose(bic, (0, 1, 2, 5, 3, 4)))).to(dtype)
    return {
        "hr": _stack_fields([s.hr for s in batch], dtype),
        "lr": _stack_fields([s.lr for s in batch], dtype),
        "hr_padded": _stack_fields([s.hr_padded for s in batch], dtype),
        "bic_up": bic_up,
    }


def blur_downsample_torch(hr, kernels, alpha, margin=0):
    """(HR (x) K) down_a on (B,U,V,3,H,W) with per-view kernels, differentiable.

    The correlation runs in the frequency domain (cheap backward through the
    FFT); the kernel is conjugated there, which is exactly spatial
    correlation with circular wrap, and the reflect pad of the kernel radius
    makes the wrap match reflect-boundary correlation.
    """
    b, u, v, c, hh, ww = hr.shape
    k = kernels.shape[-1]
    pad = (k - 1) // 2
    x = hr.reshape(b * u * v, c, hh, ww)
    x = F.pad(x, (pad, pad, pad, pad), mode="reflect")
    hp, wp = x.shape[-2:]
    # extra zero pad to an FFT-friendly grid; the reflect ring already
    # isolates the crop window from the circular wrap
    gh, gw = next_fast_len(hp), next_fast_len(wp)
    kpad = torch.zeros(b * u * v, gh, gw, dtype=hr.dtype, device=hr.device)
    kpad[:, :k, :k] = kernels.reshape(b * u * v, k, k)
    kpad = torch.roll(kpad, shifts=(-pad, -pad), dims=(-2, -1))
    kfreq = torch.fft.rfft2(kpad).unsqueeze(1)
    out = torch.fft.irfft2(torch.conj(kfreq) * torch.fft.rfft2(x, s=(gh, gw)), s=(gh, gw))
    out = out[..., pad : pad + hh, pad : pad + ww].reshape(b, u, v, c, hh, ww)
    if margin:
        out = out[..., margin:-margin, margin:-margin]
    return torch_resize(out, out.shape[-2] // alpha, out.shape[-1] // alpha)


def self_constraint_loss_torch(hr_padded, lr, kernels, noise, alpha, margin):
    down = blur_downsample_torch(hr_padded, kernels, alpha, margin=margin)
    return (down - noise - lr).abs().mean()


def total_loss(outputs, tensors, alpha, margin, w_de=1.0):
    """L = L_rec + w_de * L_DE; components reported separately."""
    l_rec = (outputs["sr"] - tensors["hr"]).abs().mean()
    l_de = self_constraint_loss_torch(
        tensors["hr_padded"], tensors["lr"], outputs["kernels"], outputs["noise"], alpha, margin
    )
    return l_rec + w_de * l_de, {"loss_rec": l_rec.detach().item(), "loss_de": l_de.detach().item()}


def _grad_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(p.grad.detach().norm() ** 2)
    return total**0.5


def _check_finite(value, iteration, components, params):
    if not np.isfinite(value):
        raise TrainingDiverged(
            f"non-finite loss at iteration {iteration}: total={value} "
            f"components={components} grad_norm={_grad_norm(params):.4g}"
        )


class TrainLog:
    """CSV logger: iter,loss,loss_rec,loss_de,lr,seconds."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.rows = []
        self._start = time.monotonic()
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("iter,loss,loss_rec,loss_de,lr,seconds\n")

    def append(self, iteration, loss, comps, lr):
        row = (iteration, loss, comps["loss_rec"], comps["loss_de"], lr,
               time.monotonic() - self._start)
        self.rows.append(row)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(",".join(repr(x) for x in row) + "\n")


def make_optimizer(params, cfg):
    return torch.optim.Adam(params, lr=cfg.base_lr, betas=(cfg.adam_beta1, cfg.adam_beta2))


def checkpoint_state(model, optimizer, opt_params, iteration, train_cfg, stage):
    """Collect a checkpoint as (arrays, meta), ready for save_blob."""
    arrays = {f"model.{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    for i, p in enumerate(opt_params):
        state = optimizer.state.get(p, {})
        if state:
            arrays[f"opt.{i}.exp_avg"] = state["exp_avg"].detach().cpu().numpy()
            arrays[f"opt.{i}.exp_avg_sq"] = state["exp_avg_sq"].detach().cpu().numpy()
            arrays[f"opt.{i}.step"] = np.asarray(float(state["step"]))
    arrays["rng.torch"] = torch.get_rng_state().numpy()
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "iteration": iteration,
        "stage": stage,
        "train_config": _jsonable(asdict(train_cfg)),
        "model_config": _jsonable(asdict(model.cfg)),
        "angular_shape": list(model.angular_shape),
        "n_opt_params": len(opt_params),
    }
    return arrays, meta


def _jsonable(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def save_checkpoint(path, model, optimizer, opt_params, iteration, train_cfg, stage):
    arrays, meta = checkpoint_state(model, optimizer, opt_params, iteration, train_cfg, stage)
    return save_blob(path, arrays, meta)


def load_checkpoint(path):
    arrays, meta = load_blob(path)
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(
            f"checkpoint {path} has format_version {meta.get('format_version')}, "
            f"expected {CHECKPOINT_FORMAT_VERSION}"
        )
    return arrays, meta


def model_from_checkpoint(arrays, meta, dtype=torch.float32):
    mc = dict(meta["model_config"])
    cfg = RestorationConfig(**mc)
    model = RestorationNetwork(tuple(meta["angular_shape"]), cfg)
    state = {
        k[len("model."):]: torch.from_numpy(v.copy())
        for k, v in arrays.items()
        if k.startswith("model.")
    }
    model.load_state_dict(state)
    return model.to(dtype)


def load_model(path, dtype=torch.float32):
    arrays, meta = load_checkpoint(path)
    return model_from_checkpoint(arrays, meta, dtype=dtype), meta


def restore_optimizer(optimizer, opt_params, arrays):
    for i, p in enumerate(opt_params):
        key = f"opt.{i}.exp_avg"
        if key in arrays:
            optimizer.state[p] = {
                "step": torch.tensor(float(arrays[f"opt.{i}.step"])),
                "exp_avg": torch.from_numpy(arrays[key].copy()),
                "exp_avg_sq": torch.from_numpy(arrays[f"opt.{i}.exp_avg_sq"].copy()),
            }


def train_config_from_meta(meta):
    tc = dict(meta["train_config"])
    tc["sigma_range"] = tuple(tc["sigma_range"])
    tc["noise_range"] = tuple(tc["noise_range"])
    return TrainConfig(**tc)


def pretrain_estimator(scenes, model, cfg, out_dir=None, deterministic=False):
    """Stage one: optimize only the estimator under the consistency loss.

    Restoration weights are never touched.  Returns the in-memory checkpoint
    (arrays, meta); writes ``pretrain.ckpt`` and ``pretrain_log.csv`` when an
    output directory is given.
    """
    if deterministic:
        torch.set_num_threads(1)
    out_dir = Path(out_dir) if out_dir else None
    log = TrainLog(out_dir / "pretrain_log.csv" if out_dir else None)
    params = list(model.estimator.parameters())
    optimizer = make_optimizer(params, cfg)
    margin = cfg.margin
    dtype = next(model.parameters()).dtype
    for it in range(cfg.pretrain_iters):
        tensors = batch_tensors(sample_batch(scenes, cfg, it), cfg.alpha, dtype)
        lr_now = cfg.base_lr
        for g in optimizer.param_groups:
            g["lr"] = lr_now
        kernels, noise = model.estimator(tensors["lr"])
        loss = self_constraint_loss_torch(
            tensors["hr_padded"], tensors["lr"], kernels, noise, cfg.alpha, margin
        )
        optimizer.zero_grad()
        loss.backward()
        loss_val = loss.detach().item()
        _check_finite(loss_val, it, {"loss_rec": 0.0, "loss_de": loss_val}, params)
        if cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        optimizer.step()
        if it % cfg.log_every == 0 or it == cfg.pretrain_iters - 1:
            log.append(it, loss_val, {"loss_rec": 0.0, "loss_de": loss_val}, lr_now)
    state = checkpoint_state(model, optimizer, params, cfg.pretrain_iters, cfg, "pretrain")
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_blob(out_dir / "pretrain.ckpt", *state)
    return state


def train_joint(scenes, model, cfg, init=None, out_dir=None, deterministic=False):
    """Stage two: optimize all parameters under L_rec + w_de * L_DE.

    ``init`` may be a checkpoint path or an in-memory (arrays, meta) pair; a
    joint-stage checkpoint resumes mid-run with bit-identical continuation
    (stateless data stream + restored optimizer state).
    """
    if deterministic:
        torch.set_num_threads(1)
    out_dir = Path(out_dir) if out_dir else None
    start_iter = 0
    params = list(model.parameters())
    optimizer = make_optimizer(params, cfg)
    if init is not None:
        arrays, meta = load_checkpoint(init) if isinstance(init, (str, Path)) else init
        state = {
            k[len("model."):]: torch.from_numpy(v.copy())
            for k, v in arrays.items()
            if k.startswith("model.")
        }
        model.load_state_dict(state)
        if meta.get("stage") == "joint":
            restore_optimizer(optimizer, params, arrays)
            start_iter = meta["iteration"]
    log = TrainLog(out_dir / "train_log.csv" if out_dir else None)
    margin = cfg.margin
    dtype = next(model.parameters()).dtype
    for it in range(start_iter, cfg.total_iters):
        tensors = batch_tensors(sample_batch(scenes, cfg, it), cfg.alpha, dtype)
        lr_now = lr_at(cfg, it)
        for g in optimizer.param_groups:
            g["lr"] = lr_now
        outputs = model(tensors["lr"], bic_up=tensors["bic_up"])
        loss, comps = total_loss(outputs, tensors, cfg.alpha, margin, cfg.w_de)
        optimizer.zero_grad()
        loss.backward()
        loss_val = loss.detach().item()
        _check_finite(loss_val, it, comps, params)
        if cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        optimizer.step()
        done = it + 1
        if it % cfg.log_every == 0 or done == cfg.total_iters:
            log.append(it, loss_val, comps, lr_now)
        if out_dir and (done % cfg.checkpoint_every == 0 or done == cfg.total_iters):
            out_dir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(out_dir / "joint.ckpt", model, optimizer, params, done, cfg, "joint")
    return checkpoint_state(model, optimizer, params, cfg.total_iters, cfg, "joint")
