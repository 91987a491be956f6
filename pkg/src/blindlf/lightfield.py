"""4D light field container and geometry-preserving manipulations.

A light field is stored as a float64 tensor of shape (U, V, H, W, 3) with
values in [0, 1]: U x V sub-aperture views of H x W RGB pixels.  Fields are
immutable after construction (the backing array is write-protected), so all
operations here are pure functions that return new fields and are safe to
call concurrently on shared inputs.
"""

from dataclasses import dataclass, field

import numpy as np

from .resample import bicubic_resize

__all__ = [
    "LightField",
    "Epi",
    "get_view",
    "center_view",
    "center_index",
    "extract_epi",
    "crop_patch",
    "augment",
    "bicubic_resize",
]


class LightField:
    """Immutable U x V x H x W x 3 radiance sample in [0, 1]."""

    def __init__(self, data, validate=True):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 5 or data.shape[4] != 3:
            raise ValueError(f"expected (U, V, H, W, 3) data, got shape {data.shape}")
        if any(s < 1 for s in data.shape[:4]):
            raise ValueError(f"all dimensions must be >= 1, got shape {data.shape}")
        if validate:
            if not np.all(np.isfinite(data)):
                raise ValueError("light field contains non-finite values")
            if data.min() < 0.0 or data.max() > 1.0:
                raise ValueError(
                    f"values outside [0, 1]: min={data.min():.6g} max={data.max():.6g}"
                )
        data = data.copy()
        data.flags.writeable = False
        self._data = data

    @property
    def data(self):
        """The read-only (U, V, H, W, 3) array."""
        return self._data

    @property
    def angular_shape(self):
        return self._data.shape[:2]

    @property
    def spatial_shape(self):
        return self._data.shape[2:4]

    @classmethod
    def clamped(cls, data):
        """Construct from arbitrary finite data, clamping into [0, 1]."""
        data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise ValueError("light field contains non-finite values")
        return cls(np.clip(data, 0.0, 1.0), validate=False)

    def view(self, u, v):
        return get_view(self, (u, v))

    def __repr__(self):
        u, v = self.angular_shape
        h, w = self.spatial_shape
        return f"LightField(angular={u}x{v}, spatial={h}x{w})"


@dataclass(frozen=True)
class Epi:
    """An epipolar-plane slice: one angular axis by one spatial axis by RGB.

    ``horizontal`` fixes (u, h) and spans (v, w); ``vertical`` fixes (v, w)
    and spans (u, h).  ``fixed_indices`` records the held-constant pair.
    """

    data: np.ndarray
    orientation: str
    fixed_indices: tuple = field(default=(0, 0))


def _check_index(value, size, axis):
    if not 0 <= value < size:
        raise IndexError(f"{axis} index {value} out of range [0, {size})")


def get_view(lf, idx):
    """Return a copy of the H x W x 3 view at (u, v).

    The result is a fresh array; mutating it never writes through to the
    parent field.
    """
    u, v = idx
    uu, vv = lf.angular_shape
    _check_index(u, uu, "u")
    _check_index(v, vv, "v")
    return lf.data[u, v].copy()


def center_index(lf):
    """Center (u, v); defined only for odd angular dimensions."""
    u, v = lf.angular_shape
    if u % 2 == 0 or v % 2 == 0:
        raise ValueError(f"center undefined for even angular shape {u}x{v}")
    return (u - 1) // 2, (v - 1) // 2


def center_view(lf):
    return get_view(lf, center_index(lf))


def extract_epi(lf, orientation, fixed_angular, fixed_spatial):
    """Slice an EPI from the field.

    horizontal: epi[v, w] = lf[fixed_angular, v, fixed_spatial, w]
    vertical:   epi[u, h] = lf[u, fixed_angular, h, fixed_spatial]
    """
    uu, vv = lf.angular_shape
    hh, ww = lf.spatial_shape
    if orientation == "horizontal":
        _check_index(fixed_angular, uu, "u")
        _check_index(fixed_spatial, hh, "h")
        data = lf.data[fixed_angular, :, fixed_spatial, :, :].copy()
    elif orientation == "vertical":
        _check_index(fixed_angular, vv, "v")
        _check_index(fixed_spatial, ww, "w")
        data = lf.data[:, fixed_angular, :, fixed_spatial, :].copy()
    else:
        raise ValueError(f"orientation must be horizontal or vertical, got {orientation!r}")
    return Epi(data=data, orientation=orientation, fixed_indices=(fixed_angular, fixed_spatial))


def crop_patch(lf, top, left, size):
    """Crop the same spatial window from every view."""
    ph, pw = size
    hh, ww = lf.spatial_shape
    if top < 0 or left < 0 or top + ph > hh or left + pw > ww:
        raise ValueError(
            f"crop window ({top},{left})+({ph},{pw}) outside spatial bounds {hh}x{ww}"
        )
    return LightField(lf.data[:, :, top : top + ph, left : left + pw, :], validate=False)


def _augment_array(arr, op, perm=None):
    # arr is (U, V, H, W, C); spatial transforms carry the matching angular
    # transform so epipolar geometry is preserved.
    if op == "hflip":
        return arr[:, ::-1, :, ::-1, :]
    if op == "vflip":
        return arr[::-1, :, ::-1, :, :]
    if op == "rot90":
        out = np.rot90(arr, k=1, axes=(2, 3))
        return np.rot90(out, k=1, axes=(0, 1))
    if op == "channel_shuffle":
        return arr[..., list(perm)]
    raise ValueError(f"unknown augmentation op {op!r}")


def augment_field(lf, op, perm=None):
    """Apply one light-field-consistent augmentation to a single field."""
    if op == "channel_shuffle":
        if perm is None or sorted(perm) != [0, 1, 2]:
            raise ValueError(f"channel_shuffle needs a permutation of (0, 1, 2), got {perm!r}")
    return LightField(np.ascontiguousarray(_augment_array(lf.data, op, perm)), validate=False)


def augment(lf_pair, op, perm=None):
    """Jointly augment an (HR, LR) pair.

    Spatial flips and rotations act on pixels and on the angular grid
    together (a horizontal flip mirrors W and reverses the v axis; rot90
    swaps H/W and rotates the (u, v) grid the same way), so the pair stays a
    geometrically valid light field pair.  ``channel_shuffle`` permutes RGB
    identically in both fields.
    """
    a, b = lf_pair
    if a.angular_shape != b.angular_shape:
        raise ValueError(
            f"pair must share angular shape, got {a.angular_shape} vs {b.angular_shape}"
        )
    return augment_field(a, op, perm), augment_field(b, op, perm)
