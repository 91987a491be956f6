"""Bicubic resampling (Keys cubic convolution, a = -0.5).

This is the single resampler used everywhere in the package: the HR->LR
downsampler of the degradation model, the LR->HR baseline upsampler, the
residual path of the restoration network, and the sub-pixel shifts of the
synthetic scenes.  Conventions are pinned so results are bit-reproducible:

* coordinate mapping is half-pixel centered: ``src = (dst + 0.5) * (in/out) - 0.5``
* output size is ``floor(size * scale + 0.5)`` (round half up)
* when downscaling, the kernel support is widened by the size ratio
  (anti-aliasing prefilter), and tap weights are renormalized to sum 1
* out-of-range taps are mirrored about the edge pixel centers without
  repeating the edge sample (the ``np.pad(mode="reflect")`` convention)
* all arithmetic is float64
"""

from functools import lru_cache

import numpy as np

KEYS_A = -0.5


def cubic_kernel(x, a=KEYS_A):
    """Keys cubic convolution kernel, vectorized over x."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    out = np.zeros_like(x)
    near = x <= 1.0
    far = (x > 1.0) & (x < 2.0)
    xn = x[near]
    xf = x[far]
    out[near] = (a + 2.0) * xn**3 - (a + 3.0) * xn**2 + 1.0
    out[far] = a * xf**3 - 5.0 * a * xf**2 + 8.0 * a * xf - 4.0 * a
    return out


def reflect_index(j, n):
    """Mirror index j into [0, n) without repeating the edge sample."""
    if n == 1:
        return 0
    period = 2 * (n - 1)
    j = j % period
    return j if j < n else period - j


def output_size(size, scale):
    """Rounded output length for one axis; must come out >= 1."""
    out = int(np.floor(size * scale + 0.5))
    if out < 1:
        raise ValueError(f"scale {scale} collapses axis of length {size} to zero")
    return out


@lru_cache(maxsize=None)
def resize_matrix(in_size, out_size):
    """Dense (out_size, in_size) float64 operator resampling one axis.

    Rows are the normalized Keys tap weights, with anti-alias widening when
    in_size > out_size and reflected out-of-range taps folded in.  Applying
    the matrix is exactly the per-pixel formula; the same operator backs the
    numpy and torch code paths.
    """
    if in_size < 1 or out_size < 1:
        raise ValueError("resize_matrix requires positive sizes")
    ratio = in_size / out_size
    support = max(ratio, 1.0)
    radius = 2.0 * support
    mat = np.zeros((out_size, in_size), dtype=np.float64)
    for i in range(out_size):
        src = (i + 0.5) * ratio - 0.5
        lo = int(np.ceil(src - radius))
        hi = int(np.floor(src + radius))
        taps = np.arange(lo, hi + 1)
        weights = cubic_kernel((taps - src) / support)
        for j, w in zip(taps, weights):
            if w != 0.0:
                mat[i, reflect_index(j, in_size)] += w
        mat[i] /= mat[i].sum()
    mat.flags.writeable = False
    return mat


def bicubic_resize(img, scale):
    """Resize an H x W x C image (or H x W plane) by ``scale``.

    Deterministic, anti-aliased on downscale, exact identity at scale 1,
    exact on constant inputs.  The result is clamped to [0, 1].
    """
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    img = np.asarray(img, dtype=np.float64)
    out_h = output_size(img.shape[0], scale)
    out_w = output_size(img.shape[1], scale)
    out = resize_to(img, out_h, out_w)
    return np.clip(out, 0.0, 1.0)


def resize_to(img, out_h, out_w):
    """Resample to an explicit target size, without clamping."""
    img = np.asarray(img, dtype=np.float64)
    rh = resize_matrix(img.shape[0], out_h)
    rw = resize_matrix(img.shape[1], out_w)
    # rows first, then columns; einsum keeps trailing channel axes intact
    out = np.tensordot(rh, img, axes=(1, 0))
    out = np.moveaxis(np.tensordot(rw, np.moveaxis(out, 1, 0), axes=(1, 0)), 0, 1)
    return out


@lru_cache(maxsize=None)
def _shift_taps(frac, n_taps=4):
    offsets = np.arange(-(n_taps // 2 - 1), n_taps // 2 + 1)
    w = cubic_kernel(frac - offsets)
    return offsets, w / w.sum()


def bicubic_shift(img, dy, dx):
    """Translate an image by a (possibly fractional) pixel offset.

    ``out[y, x] = img[y - dy, x - dx]`` evaluated with the Keys kernel and
    reflected borders.  Integer offsets reproduce exact pixel shifts.
    """
    img = np.asarray(img, dtype=np.float64)
    out = img
    for axis, d in ((0, dy), (1, dx)):
        if d == 0:
            continue
        n = img.shape[axis]
        base = np.arange(n, dtype=np.float64) - d
        floor = np.floor(base).astype(int)
        frac = float(base[0] - floor[0])  # constant across the axis
        offsets, w = _shift_taps(round(frac, 12))
        acc = np.zeros_like(out)
        for off, wt in zip(offsets, w):
            idx = np.array([reflect_index(j, n) for j in floor + off])
            acc += wt * np.take(out, idx, axis=axis)
        out = acc
    return out
