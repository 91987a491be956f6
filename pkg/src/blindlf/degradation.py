"""Synthetic degradation of light fields: LR = (HR (x) K) down_a + N.

Per view, the HR field is correlated with an isotropic Gaussian kernel,
bicubic-downsampled by the scale factor with anti-aliasing, and perturbed by
seeded zero-mean Gaussian noise (std quoted on the 0-255 scale).  The
realized noise and the kernels are kept in a :class:`DegradationRecord` so
generative-model identities can be checked exactly.

All functions here are pure; the RNG enters only through explicit seeds, so
the same (hr, config) pair always produces bit-identical output.
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy.fft import irfft2, next_fast_len, rfft2
from scipy.signal import fftconvolve

from .lightfield import LightField
from .resample import resize_to

_FFT_WORKERS = os.cpu_count() or 1

KERNEL_SIZE = 21
DELTA_SIGMA = 1e-4


@dataclass(frozen=True)
class GaussianKernel:
    """Normalized k x k isotropic blur kernel with its width in pixels."""

    weights: np.ndarray
    sigma: float

    @property
    def size(self):
        return self.weights.shape[0]


@dataclass(frozen=True)
class DegradationConfig:
    """Generative knobs: kernel width, noise std (0-255 scale), scale, seed."""

    sigma: float
    noise_level: float
    alpha: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError(f"alpha must be >= 1, got {self.alpha}")
        if self.sigma < 0 or self.noise_level < 0:
            raise ValueError("sigma and noise_level must be non-negative")


@dataclass(frozen=True)
class DegradationRecord:
    """Ground truth of one degradation draw.

    ``kernels`` is (U, V) of GaussianKernel (all equal under isotropy but
    stored per view); ``noise`` is the pre-clamp realized noise at LR
    resolution, shape (U, V, h, w, 3), signed.
    """

    kernels: tuple
    noise: np.ndarray
    config: DegradationConfig

    def kernel_array(self):
        """Stack kernels into a (U, V, k, k) array."""
        uu = len(self.kernels)
        vv = len(self.kernels[0])
        return np.stack(
            [np.stack([self.kernels[u][v].weights for v in range(vv)]) for u in range(uu)]
        )


def isotropic_gaussian_kernel(sigma, size=KERNEL_SIZE):
    """Build a normalized isotropic Gaussian kernel on a size x size window.

    Mass outside the window is truncated and the kernel renormalized to sum
    exactly 1.  Widths below 1e-4 collapse to the discrete delta.
    """
    if size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    c = (size - 1) // 2
    weights = np.zeros((size, size), dtype=np.float64)
    if sigma < DELTA_SIGMA:
        weights[c, c] = 1.0
    else:
        ax = np.arange(size, dtype=np.float64) - c
        g = np.exp(-(ax**2) / (2.0 * sigma**2))
        weights = np.outer(g, g)
        weights /= weights.sum()
    weights.flags.writeable = False
    return GaussianKernel(weights=weights, sigma=float(sigma))


def blur_view(img, kernel, mode="reflect"):
    """Correlate each channel of an H x W x C image with the kernel.

    ``reflect`` pads by mirroring without repeating the edge sample, so the
    output has the input size everywhere.  ``valid_via_oversize`` zero-pads
    instead: it assumes the image carries a margin of at least (k-1)/2 that
    downstream processing discards, which makes the border halos irrelevant
    while keeping interior pixels exact.
    """
    img = np.asarray(img, dtype=np.float64)
    k = np.asarray(kernel.weights if isinstance(kernel, GaussianKernel) else kernel)
    pad = (k.shape[0] - 1) // 2
    if mode not in ("reflect", "valid_via_oversize"):
        raise ValueError(f"unknown blur mode {mode!r}")
    if k[pad, pad] == 1.0 and np.count_nonzero(k) == 1:
        return img.copy()  # delta kernel: identity, kept exact
    if mode == "reflect":
        padded = np.pad(img, ((pad, pad), (pad, pad)) + ((0, 0),) * (img.ndim - 2), mode="reflect")
    else:
        padded = np.pad(img, ((pad, pad), (pad, pad)) + ((0, 0),) * (img.ndim - 2))
    # correlation == convolution with the flipped kernel
    kflip = k[::-1, ::-1]
    if img.ndim == 3:
        stack = np.moveaxis(padded, 2, 0)
        out = fftconvolve(stack, kflip[None], mode="valid", axes=(1, 2))
        return np.moveaxis(out, 0, 2)
    return fftconvolve(padded, kflip, mode="valid")


def _downsample_plane(img, alpha):
    # same operator (and float-op order) as the public bicubic resize
    return resize_to(img, img.shape[0] // alpha, img.shape[1] // alpha)


def _is_delta(kernel):
    c = (kernel.shape[0] - 1) // 2
    return kernel[c, c] == 1.0 and np.count_nonzero(kernel) == 1


def _blur_field(data, kernels, mode="reflect"):
    """Batched per-view correlation of (U, V, H, W, 3) with (U, V, k, k).

    Frequency-domain product over all views and channels at once, at the
    FFT-friendly full-convolution size, with both available cores.
    """
    uu, vv, hh, ww = data.shape[:4]
    k = kernels.shape[-1]
    pad = (k - 1) // 2
    if all(_is_delta(kernels[u, v]) for u in range(uu) for v in range(vv)):
        return data.copy()
    pad_mode = "reflect" if mode == "reflect" else "constant"
    stack = np.moveaxis(data, 4, 2).reshape(uu * vv, 3, hh, ww)
    padded = np.pad(stack, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode=pad_mode)
    kflip = np.ascontiguousarray(kernels.reshape(uu * vv, 1, k, k)[:, :, ::-1, ::-1])
    full = (padded.shape[2] + k - 1, padded.shape[3] + k - 1)
    fshape = (next_fast_len(full[0]), next_fast_len(full[1]))
    fx = rfft2(padded, fshape, axes=(2, 3), workers=_FFT_WORKERS)
    fk = rfft2(kflip, fshape, axes=(2, 3), workers=_FFT_WORKERS)
    out = irfft2(fx * fk, fshape, axes=(2, 3), workers=_FFT_WORKERS)
    out = out[:, :, k - 1 : k - 1 + hh, k - 1 : k - 1 + ww]  # 'valid' region
    return np.moveaxis(out.reshape(uu, vv, 3, hh, ww), 2, 4)


def draw_noise(shape, noise_level, seed):
    """Realize the additive noise field for a degradation draw.

    One row-major standard-normal draw over the full (U, V, h, w, 3) shape
    from ``default_rng(seed)``, scaled by noise_level / 255; every view,
    pixel, and channel is independent.
    """
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape) * (noise_level / 255.0)


def degrade_lightfield(hr, config, margin=0, clamp=True):
    """Run the forward degradation on an HR field.

    If ``margin`` is nonzero the input carries that many extra pixels on
    every side; they absorb the blur boundary and are removed before
    downsampling (the margin must cover the kernel radius).  Returns the LR
    field and the ground-truth record.  With ``clamp=False`` (test mode) the
    LR values are returned unclamped so generative identities hold exactly.
    """
    data = hr.data if isinstance(hr, LightField) else np.asarray(hr, dtype=np.float64)
    uu, vv, hh, ww = data.shape[:4]
    core_h, core_w = hh - 2 * margin, ww - 2 * margin
    if margin > 0 and margin < (KERNEL_SIZE - 1) // 2:
        raise ValueError(f"margin {margin} smaller than kernel radius {(KERNEL_SIZE - 1) // 2}")
    if core_h % config.alpha or core_w % config.alpha:
        raise ValueError(
            f"spatial dims {core_h}x{core_w} (after margin removal) "
            f"not divisible by alpha={config.alpha}"
        )
    kernel = isotropic_gaussian_kernel(config.sigma)
    lr_h, lr_w = core_h // config.alpha, core_w // config.alpha
    noise = draw_noise((uu, vv, lr_h, lr_w, 3), config.noise_level, config.seed)

    kernel_field = np.broadcast_to(kernel.weights, (uu, vv, KERNEL_SIZE, KERNEL_SIZE))
    lr = blur_downsample(data, kernel_field, config.alpha, margin=margin) + noise

    kernels = tuple(tuple(kernel for _ in range(vv)) for _ in range(uu))
    record = DegradationRecord(kernels=kernels, noise=noise, config=config)
    if clamp:
        return LightField.clamped(lr), record
    return LightField(lr, validate=False), record


def sample_degradation(rng, sigma_range=(0.0, 4.0), noise_range=(0.0, 75.0), alpha=4):
    """Draw a random degradation: sigma ~ U[0,4], noise ~ U[0,75] by default."""
    sigma = rng.uniform(*sigma_range)
    noise_level = rng.uniform(*noise_range)
    seed = int(rng.integers(0, 2**63))
    return DegradationConfig(sigma=sigma, noise_level=noise_level, alpha=alpha, seed=seed)


def blur_downsample(hr_data, kernels, alpha, margin=0):
    """Per-view blur + bicubic downsample, the (HR (x) K) down_a operator.

    ``kernels`` is a (U, V, k, k) array (one kernel per view).  This is the
    single code path shared by the generative model and the consistency-loss
    identities, so substituting the recorded truth cancels bit-exactly.
    """
    hr_data = np.asarray(hr_data, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    uu, vv = hr_data.shape[:2]
    blurred = _blur_field(hr_data, kernels, mode="reflect")
    if margin:
        blurred = blurred[:, :, margin:-margin, margin:-margin]
    core_h, core_w = blurred.shape[2:4]
    out = np.empty((uu, vv, core_h // alpha, core_w // alpha, 3), dtype=np.float64)
    for u in range(uu):
        for v in range(vv):
            out[u, v] = _downsample_plane(blurred[u, v], alpha)
    return out


def self_constraint_loss(hr, lr, k_est, n_est, alpha, margin=0):
    """Degradation-consistency loss: mean |(HR (x) K~) down_a - N~ - LR|.

    Implements the residual exactly as written, including the sign on the
    noise estimate: at the optimum N~ approximates the *negative* of the
    realized noise.  ``margin`` declares extra HR padding (as used by the
    training patch protocol) so the blur boundary matches the generative
    path and the loss vanishes at the true degradation.
    """
    hr_data = hr.data if isinstance(hr, LightField) else np.asarray(hr, dtype=np.float64)
    lr_data = lr.data if isinstance(lr, LightField) else np.asarray(lr, dtype=np.float64)
    n_est = np.asarray(n_est, dtype=np.float64)
    if n_est.shape != lr_data.shape:
        raise ValueError(f"noise estimate shape {n_est.shape} != LR shape {lr_data.shape}")
    down = blur_downsample(hr_data, k_est, alpha, margin=margin)
    if down.shape != lr_data.shape:
        raise ValueError(f"degraded shape {down.shape} != LR shape {lr_data.shape}")
    return float(np.mean(np.abs(down - n_est - lr_data)))
