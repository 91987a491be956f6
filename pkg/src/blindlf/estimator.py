"""Degradation estimator: per-view blur kernels and noise maps from an LR field.

A shared convolution extracts per-view features, a side-to-center block
aggregates all views into the center feature, a center-to-side block
broadcasts the fused center back into every view, and two heads emit a
softmax-normalized kernel per view plus a signed 3-channel noise map at LR
resolution.

Tensors flow as (B, U, V, C, h, w); per-view convolutions run on the views
merged into the batch axis.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .lightfield import LightField


@dataclass(frozen=True)
class EstimatorConfig:
    feature_channels: int = 64
    num_rcab: int = 2
    kernel_size_k: int = 21
    share_kernel_across_views: bool = False
    use_s2c: bool = True
    use_c2s: bool = True

    def __post_init__(self):
        if self.feature_channels < 1 or self.num_rcab < 1:
            raise ValueError("feature_channels and num_rcab must be positive")
        if self.kernel_size_k % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {self.kernel_size_k}")


@dataclass(frozen=True)
class KernelEstimate:
    """(U, V, k, k) per-view kernels; each slice is a softmax simplex."""

    kernels: np.ndarray

    def validate(self, tol=1e-5):
        if self.kernels.min() < 0:
            raise ValueError("kernel estimate has negative entries")
        sums = self.kernels.sum(axis=(-2, -1))
        if np.abs(sums - 1.0).max() > tol:
            raise ValueError(f"kernel sums deviate from 1 by {np.abs(sums - 1.0).max():.3g}")
        return self


@dataclass(frozen=True)
class NoiseMapEstimate:
    """(U, V, h, w, 3) signed noise maps at LR resolution."""

    maps: np.ndarray

    def validate(self):
        if not np.all(np.isfinite(self.maps)):
            raise ValueError("noise estimate has non-finite values")
        return self


def merge_views(x):
    """(B, U, V, C, h, w) -> (B*U*V, C, h, w)"""
    b, u, v, c, h, w = x.shape
    return x.reshape(b * u * v, c, h, w)


def split_views(x, b, u, v):
    """(B*U*V, C, h, w) -> (B, U, V, C, h, w)"""
    n, c, h, w = x.shape
    return x.reshape(b, u, v, c, h, w)


class CALayer(nn.Module):
    """Per-channel gate: global pool -> bottleneck -> sigmoid scale."""

    def __init__(self, channels, reduction=4):
        super().__init__()
        mid = max(channels // reduction, 1)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.gate = nn.Sequential(
            nn.Conv2d(channels, mid, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(mid, channels, 1),
            nn.Sigmoid(),
        )

    def forward(self, x):
        return x * self.gate(self.pool(x))


class RCAB(nn.Module):
    """Residual block with channel attention: conv-act-conv -> CA -> + x."""

    def __init__(self, channels):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            CALayer(channels),
        )

    def forward(self, x):
        return x + self.body(x)


def init_conv_weights(module):
    """Kaiming-uniform fan-in init for convs/linears, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_uniform_(m.weight, a=0.2, mode="fan_in", nonlinearity="leaky_relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class DegradationEstimator(nn.Module):
    """Dual-head estimator producing per-view kernels and noise maps.

    The side-to-center fusion concatenates every view feature in raster
    (u-major) order before the fusing convolution, so aggregation is
    deterministic; both fusion blocks are residual, making them exact
    identities when their convolutions are zeroed.
    """

    def __init__(self, angular_shape, cfg=EstimatorConfig(), seed=0):
        super().__init__()
        self.angular_shape = tuple(angular_shape)
        self.cfg = cfg
        u, v = self.angular_shape
        c = cfg.feature_channels
        k2 = cfg.kernel_size_k**2
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.act = nn.LeakyReLU(0.2, inplace=True)
            self.feat = nn.Conv2d(3, c, 3, padding=1)
            self.s2c_fuse = nn.Conv2d(u * v * c, c, 3, padding=1)
            self.c2s_fuse = nn.Conv2d(2 * c, c, 3, padding=1)
            self.kernel_trunk = nn.Sequential(
                nn.Conv2d(c, c, 3, padding=1),
                nn.LeakyReLU(0.2, inplace=True),
                *[RCAB(c) for _ in range(cfg.num_rcab)],
            )
            self.kernel_head = nn.Linear(c, k2)
            self.noise_trunk = nn.Sequential(
                nn.Conv2d(c, c, 3, padding=1),
                nn.LeakyReLU(0.2, inplace=True),
                *[RCAB(c) for _ in range(cfg.num_rcab)],
            )
            self.noise_head = nn.Conv2d(c, 3, 3, padding=1)
            init_conv_weights(self)

    def extract_features(self, lr):
        """lr (B,U,V,3,h,w) -> (side (B,U,V,C,h,w), center (B,1,1,C,h,w))"""
        b, u, v = lr.shape[:3]
        side = split_views(self.act(self.feat(merge_views(lr))), b, u, v)
        if u % 2 == 0 or v % 2 == 0:
            raise ValueError(f"center undefined for even angular shape {u}x{v}")
        center = side[:, (u - 1) // 2 : (u - 1) // 2 + 1, (v - 1) // 2 : (v - 1) // 2 + 1]
        return side, center

    def side_to_center(self, side, center):
        """Aggregate all views into the center feature (residual)."""
        b, u, v, c, h, w = side.shape
        stacked = side.reshape(b, u * v * c, h, w)  # raster (u, v) order
        fused = self.s2c_fuse(stacked).reshape(b, 1, 1, c, h, w)
        return center + fused

    def center_to_side(self, fused_center, side):
        """Broadcast the fused center into every view (residual)."""
        b, u, v, c, h, w = side.shape
        tiled = fused_center.expand(b, u, v, c, h, w)
        cat = torch.cat([side, tiled], dim=3)
        out = self.c2s_fuse(merge_views(cat))
        return side + split_views(out, b, u, v)

    def kernel_logits(self, fused):
        b, u, v = fused.shape[:3]
        feats = self.kernel_trunk(merge_views(fused))
        pooled = feats.mean(dim=(2, 3))  # global adaptive average pool to 1x1
        logits = self.kernel_head(pooled).reshape(b, u, v, -1)
        if self.cfg.share_kernel_across_views:
            logits = logits.mean(dim=(1, 2), keepdim=True).expand_as(logits)
        return logits

    def estimate_kernels(self, fused):
        """fused (B,U,V,C,h,w) -> kernels (B,U,V,k,k), each a softmax simplex."""
        k = self.cfg.kernel_size_k
        logits = self.kernel_logits(fused)
        return torch.softmax(logits, dim=-1).reshape(*logits.shape[:3], k, k)

    def estimate_noise(self, fused):
        """fused (B,U,V,C,h,w) -> signed noise maps (B,U,V,3,h,w)."""
        b, u, v = fused.shape[:3]
        out = self.noise_head(self.noise_trunk(merge_views(fused)))
        return split_views(out, b, u, v)

    def fuse(self, lr):
        side, center = self.extract_features(lr)
        fused_center = self.side_to_center(side, center) if self.cfg.use_s2c else center
        return self.center_to_side(fused_center, side) if self.cfg.use_c2s else side

    def forward(self, lr):
        """lr (B,U,V,3,h,w) -> (kernels (B,U,V,k,k), noise (B,U,V,3,h,w))"""
        fused = self.fuse(lr)
        return self.estimate_kernels(fused), self.estimate_noise(fused)

    @torch.no_grad()
    def estimate(self, lf):
        """Numpy-facing inference on a LightField."""
        dtype = next(self.parameters()).dtype
        lr = torch.from_numpy(np.transpose(lf.data, (0, 1, 4, 2, 3)).copy()).to(dtype)
        kernels, noise = self.forward(lr.unsqueeze(0))
        k_est = KernelEstimate(kernels[0].double().numpy())
        n_est = NoiseMapEstimate(np.transpose(noise[0].double().numpy(), (0, 1, 3, 4, 2)))
        return k_est, n_est
