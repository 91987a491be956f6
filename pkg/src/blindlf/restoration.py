"""Degradation-conditioned light field restoration.

Pipeline: estimate per-view kernels and noise maps, deconvolve a latent HR
field in the frequency domain, embed the degradation estimates, extract
initial features from the LR field and its noise-compensated twin, then run
n1 building blocks (cross-domain fusion + spatial-angular mixing) and a
sub-pixel reconstructor whose output is added to the bicubic-upsampled LR
field.

The final reconstruction head is zero-initialized, so the untrained network
reproduces the bicubic baseline exactly; every ablation switch replaces its
block with an identity, never changing shapes.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .estimator import (
    CALayer,
    DegradationEstimator,
    EstimatorConfig,
    KernelEstimate,
    NoiseMapEstimate,
    init_conv_weights,
    merge_views,
    split_views,
)
from .lightfield import LightField
from .resample import bicubic_resize, resize_matrix


@dataclass(frozen=True)
class RestorationConfig:
    n1: int = 10
    feature_channels: int = 64
    kernel_embed_dim: int = 64
    # the deconvolution input is the bicubic-upsampled LR field, whose
    # interpolation error behaves like ~1e-2-variance noise at x4, so the
    # regularizer must sit at that scale for the latent to beat the baseline
    fft_reg_lambda: float = 1e-2
    alpha: int = 4
    num_rcab: int = 2
    use_estimator: bool = True
    use_cra: bool = True
    use_aw: bool = True
    use_s2c: bool = True
    use_c2s: bool = True
    share_kernel_across_views: bool = False

    def __post_init__(self):
        if self.n1 < 1:
            raise ValueError(f"n1 must be >= 1, got {self.n1}")
        if self.fft_reg_lambda <= 0:
            raise ValueError(f"fft_reg_lambda must be positive, got {self.fft_reg_lambda}")
        if self.alpha < 1:
            raise ValueError(f"alpha must be >= 1, got {self.alpha}")

    def estimator_config(self):
        return EstimatorConfig(
            feature_channels=self.feature_channels,
            num_rcab=self.num_rcab,
            share_kernel_across_views=self.share_kernel_across_views,
            use_s2c=self.use_s2c,
            use_c2s=self.use_c2s,
        )


_MATRIX_CACHE = {}


def torch_resize_matrix(in_size, out_size, dtype, device=torch.device("cpu")):
    key = (in_size, out_size, dtype, device)
    if key not in _MATRIX_CACHE:
        mat = torch.from_numpy(np.array(resize_matrix(in_size, out_size)))
        _MATRIX_CACHE[key] = mat.to(dtype=dtype, device=device)
    return _MATRIX_CACHE[key]


def torch_resize(x, out_h, out_w):
    """Apply the shared bicubic operator to (..., H, W), differentiably."""
    rh = torch_resize_matrix(x.shape[-2], out_h, x.dtype, x.device)
    rw = torch_resize_matrix(x.shape[-1], out_w, x.dtype, x.device)
    return torch.einsum("ij,...jk,lk->...il", rh, x, rw)


def wiener_filter(y, kernels, lam):
    """Frequency-domain deconvolution of (..., C, H, W) by (..., k, k) kernels.

    Reflect-pads by k-1 pixels, zero-pads the kernel to the grid with its
    center rolled to the origin, applies conj(K)F(Y)/(|K|^2 + lam), and
    center-crops.  Differentiable with respect to the kernels.  Output is
    not clamped here.
    """
    if lam <= 0:
        raise ValueError(f"regularizer must be positive, got {lam}")
    lead = y.shape[:-3]
    c, h, w = y.shape[-3:]
    k = kernels.shape[-1]
    pad = k - 1
    if pad >= h or pad >= w:
        raise ValueError(f"image {h}x{w} too small for reflect padding of {pad}")
    yf = y.reshape(-1, c, h, w)
    kf = kernels.reshape(-1, k, k)
    ypad = F.pad(yf, (pad, pad, pad, pad), mode="reflect")
    hp, wp = ypad.shape[-2:]
    kpad = torch.zeros(kf.shape[0], hp, wp, dtype=y.dtype, device=y.device)
    kpad[:, :k, :k] = kf
    kpad = torch.roll(kpad, shifts=(-(k // 2), -(k // 2)), dims=(-2, -1))
    kfreq = torch.fft.rfft2(kpad)
    yfreq = torch.fft.rfft2(ypad)
    filt = torch.conj(kfreq) / (kfreq.abs() ** 2 + lam)
    x = torch.fft.irfft2(filt.unsqueeze(1) * yfreq, s=(hp, wp))
    x = x[..., pad : pad + h, pad : pad + w]
    return x.reshape(*lead, c, h, w)


def fft_deconvolve_latent(lr, k_est, alpha, lam):
    """Per-view Wiener deconvolution of the bicubic-upsampled LR field.

    Numpy-facing: takes a LightField and a KernelEstimate, runs in float64,
    returns a clamped LightField at alpha-upscaled resolution.
    """
    kernels = k_est.kernels if isinstance(k_est, KernelEstimate) else np.asarray(k_est)
    up = bicubic_up_field(lr.data, alpha)
    y = torch.from_numpy(np.transpose(up, (0, 1, 4, 2, 3)).copy())
    k = torch.from_numpy(np.array(kernels, dtype=np.float64))
    x = wiener_filter(y, k, lam)
    return LightField.clamped(np.transpose(x.numpy(), (0, 1, 3, 4, 2)))


def bicubic_up_field(data, alpha):
    """Clamped bicubic upsample of every view of a (U, V, H, W, 3) array."""
    uu, vv = data.shape[:2]
    return np.stack(
        [np.stack([bicubic_resize(data[u, v], alpha) for v in range(vv)]) for u in range(uu)]
    )


def delta_kernels(shape, k, dtype, device=torch.device("cpu")):
    """Constant per-view delta kernels for the estimator-disabled path."""
    kernels = torch.zeros(*shape, k, k, dtype=dtype, device=device)
    kernels[..., k // 2, k // 2] = 1.0
    return kernels


class CrossAttention(nn.Module):
    """Channel-transposed cross attention with a residual connection.

    Queries come from the first argument, keys/values from the second; the
    attention matrix is C x C per view (cost linear in pixels) with
    temperature 1/sqrt(h*w), and the gated values are added back onto the
    query stream.  Asymmetric by construction: CrA(a, b) != CrA(b, a).
    """

    def __init__(self, channels):
        super().__init__()
        self.wq = nn.Conv2d(channels, channels, 1, bias=False)
        self.wk = nn.Conv2d(channels, channels, 1, bias=False)
        self.wv = nn.Conv2d(channels, channels, 1, bias=False)
        self.proj = nn.Conv2d(channels, channels, 1, bias=False)

    def attention(self, f_a, f_b):
        n, c, h, w = f_a.shape
        q = self.wq(f_a).reshape(n, c, h * w)
        k = self.wk(f_b).reshape(n, c, h * w)
        logits = torch.bmm(q, k.transpose(1, 2)) / (h * w) ** 0.5
        return torch.softmax(logits, dim=-1)

    def forward(self, f_a, f_b):
        n, c, h, w = f_a.shape
        attn = self.attention(f_a, f_b)
        v = self.wv(f_b).reshape(n, c, h * w)
        mixed = torch.bmm(attn, v).reshape(n, c, h, w)
        return f_a + self.proj(mixed)


class AdaptiveWeight(nn.Module):
    """Channel gate: global pool -> two-layer bottleneck -> sigmoid rescale."""

    def __init__(self, channels, reduction=4):
        super().__init__()
        mid = max(channels // reduction, 1)
        self.squeeze = nn.Conv2d(channels, mid, 1)
        self.excite = nn.Conv2d(mid, channels, 1)
        self.act = nn.LeakyReLU(0.2, inplace=True)

    def gates(self, f):
        pooled = f.mean(dim=(2, 3), keepdim=True)
        return torch.sigmoid(self.excite(self.act(self.squeeze(pooled))))

    def forward(self, f):
        return f * self.gates(f)


class MsfBlock(nn.Module):
    """Modulated-selective fusion of image features with degradation features.

    out = AW(CrA(f1, f_deg)) + AW(CrA(f_deg, f1)); either stage degrades to
    the identity when its switch is off, so with both off the block is the
    plain sum f1 + f_deg.
    """

    def __init__(self, channels, use_cra=True, use_aw=True):
        super().__init__()
        self.use_cra = use_cra
        self.use_aw = use_aw
        if use_cra:
            self.cra_img = CrossAttention(channels)
            self.cra_deg = CrossAttention(channels)
        if use_aw:
            self.aw_img = AdaptiveWeight(channels)
            self.aw_deg = AdaptiveWeight(channels)

    def forward(self, f1, f_deg):
        a, b = (self.cra_img(f1, f_deg), self.cra_deg(f_deg, f1)) if self.use_cra else (f1, f_deg)
        if self.use_aw:
            a, b = self.aw_img(a), self.aw_deg(b)
        return a + b


class SavBlock(nn.Module):
    """Spatial-angular mixing with two parallel branches.

    Separable branch: spatial 3x3 conv per view, then 3x3 conv over the
    (U, V) grid at every pixel.  Correlated branch: 3x3 convs on the two EPI
    arrangements (u-h planes, then v-w planes).  The branches are
    concatenated, fused, gated by channel attention, and added residually.
    """

    def __init__(self, channels):
        super().__init__()
        self.act = nn.LeakyReLU(0.2, inplace=True)
        self.spatial = nn.Conv2d(channels, channels, 3, padding=1)
        self.angular = nn.Conv2d(channels, channels, 3, padding=1)
        self.epi_uh = nn.Conv2d(channels, channels, 3, padding=1)
        self.epi_vw = nn.Conv2d(channels, channels, 3, padding=1)
        self.fuse = nn.Conv2d(2 * channels, channels, 1)
        self.ca = CALayer(channels)

    def forward(self, x):
        b, u, v, c, h, w = x.shape
        for name, size in (("u", u), ("v", v)):
            if size < 3:
                raise ValueError(f"angular axis {name}={size} smaller than angular kernel 3")
        # separable: spatial per view, then angular per pixel
        sas = self.act(self.spatial(merge_views(x)))
        sas = sas.reshape(b, u, v, c, h, w).permute(0, 4, 5, 3, 1, 2).reshape(b * h * w, c, u, v)
        sas = self.act(self.angular(sas))
        sas = sas.reshape(b, h, w, c, u, v).permute(0, 4, 5, 3, 1, 2)
        # correlated: u-h planes, then v-w planes
        sac = x.permute(0, 2, 5, 3, 1, 4).reshape(b * v * w, c, u, h)
        sac = self.act(self.epi_uh(sac))
        sac = sac.reshape(b, v, w, c, u, h).permute(0, 4, 1, 3, 2, 5).reshape(b * u * h, c, v, w)
        sac = self.act(self.epi_vw(sac))
        sac = sac.reshape(b, u, h, c, v, w).permute(0, 1, 4, 3, 2, 5)
        cat = torch.cat([merge_views(sas.contiguous()), merge_views(sac.contiguous())], dim=1)
        out = self.ca(self.fuse(cat))
        return x + split_views(out, b, u, v)


class BuildingBlock(nn.Module):
    def __init__(self, channels, use_cra, use_aw):
        super().__init__()
        self.msf = MsfBlock(channels, use_cra=use_cra, use_aw=use_aw)
        self.sav = SavBlock(channels)

    def forward(self, f, f_deg):
        b, u, v = f.shape[:3]
        fused = self.msf(merge_views(f), merge_views(f_deg))
        return self.sav(split_views(fused, b, u, v))


class DegradationEmbedding(nn.Module):
    """Project kernels, stretch them spatially, join noise maps, embed."""

    def __init__(self, kernel_size, embed_dim, channels):
        super().__init__()
        self.project = nn.Linear(kernel_size**2, embed_dim)
        self.body = nn.Sequential(
            nn.Conv2d(embed_dim + 3, channels, 3, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
        )

    def stretch(self, kernels, h, w):
        """(B,U,V,k,k) -> (B,U,V,E,h,w), spatially constant per view."""
        b, u, v = kernels.shape[:3]
        coded = self.project(kernels.reshape(b, u, v, -1))
        return coded[..., None, None].expand(b, u, v, coded.shape[-1], h, w)

    def forward(self, kernels, noise):
        b, u, v, _, h, w = noise.shape
        stretched = self.stretch(kernels, h, w)
        cat = torch.cat([stretched, noise], dim=3)
        return split_views(self.body(merge_views(cat)), b, u, v)


class HrFeatureExtractor(nn.Module):
    """Strided convs bringing the latent HR field down to LR feature size."""

    def __init__(self, channels, alpha):
        super().__init__()
        self.alpha = alpha
        stages = []
        in_ch = 3
        remaining = alpha
        while remaining % 2 == 0:
            stages += [nn.Conv2d(in_ch, channels, 3, stride=2, padding=1), nn.LeakyReLU(0.2, True)]
            in_ch = channels
            remaining //= 2
        if remaining > 1:
            stages += [
                nn.Conv2d(in_ch, channels, 3, stride=remaining, padding=1),
                nn.LeakyReLU(0.2, True),
            ]
            in_ch = channels
        if in_ch != channels:
            stages += [nn.Conv2d(in_ch, channels, 3, padding=1), nn.LeakyReLU(0.2, True)]
        self.body = nn.Sequential(*stages)

    def forward(self, latent):
        b, u, v = latent.shape[:3]
        h, w = latent.shape[-2:]
        if h % self.alpha or w % self.alpha:
            raise ValueError(
                f"latent spatial {h}x{w} does not stride down by alpha={self.alpha}"
            )
        return split_views(self.body(merge_views(latent)), b, u, v)


class Reconstructor(nn.Module):
    """Sub-pixel upsampler with a zero-initialized 3-channel head.

    Upsampling decomposes the scale factor into pixel-shuffle x2 stages plus
    one fractional bicubic stage when the factor is not a power of two.
    """

    def __init__(self, channels, alpha):
        super().__init__()
        if alpha < 1:
            raise ValueError(f"alpha must be >= 1, got {alpha}")
        self.alpha = alpha
        n2 = int(np.floor(np.log2(alpha))) if alpha > 1 else 0
        self.frac = alpha / (2**n2)
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1), nn.LeakyReLU(0.2, True)
        )
        ups = []
        up_ch = max(channels // 2, 4)  # narrower at growing resolution
        in_ch = channels
        for _ in range(n2):
            ups += [
                nn.Conv2d(in_ch, 4 * up_ch, 3, padding=1),
                nn.PixelShuffle(2),
                nn.LeakyReLU(0.2, True),
            ]
            in_ch = up_ch
        self.upsample = nn.Sequential(*ups)
        self.head = nn.Conv2d(in_ch, 3, 3, padding=1)

    def forward(self, f, lr_shape):
        b, u, v = f.shape[:3]
        h, w = lr_shape
        out = self.head(self.upsample(self.body(merge_views(f))))
        if self.frac != 1.0:
            out = torch_resize(out, h * self.alpha, w * self.alpha)
        return split_views(out, b, u, v)


class RestorationNetwork(nn.Module):
    """The full blind SR model over (B, U, V, 3, h, w) tensors.

    ``forward`` returns a dict with the super-resolved field and every
    intermediate needed by the losses and the inspection tools:
    sr, kernels, noise, latent, residual.
    """

    def __init__(self, angular_shape, cfg=RestorationConfig(), seed=0):
        super().__init__()
        self.cfg = cfg
        self.angular_shape = tuple(angular_shape)
        c = cfg.feature_channels
        self.estimator = DegradationEstimator(angular_shape, cfg.estimator_config(), seed=seed)
        with torch.random.fork_rng():
            torch.manual_seed(seed + 1)
            self.embed = DegradationEmbedding(self.estimator.cfg.kernel_size_k, cfg.kernel_embed_dim, c)
            self.init_extract = nn.Sequential(
                nn.Conv2d(6, c, 3, padding=1),
                nn.LeakyReLU(0.2, inplace=True),
                nn.Conv2d(c, c, 3, padding=1),
            )
            self.hre = HrFeatureExtractor(c, cfg.alpha)
            self.fuse_init = nn.Conv2d(2 * c, c, 1)
            self.blocks = nn.ModuleList(
                [BuildingBlock(c, cfg.use_cra, cfg.use_aw) for _ in range(cfg.n1)]
            )
            self.reconstructor = Reconstructor(c, cfg.alpha)
            init_conv_weights(self)
            for m in self.modules():
                if isinstance(m, CrossAttention):
                    for conv in (m.wq, m.wk, m.wv, m.proj):
                        nn.init.orthogonal_(conv.weight.view(conv.weight.shape[0], -1))
            nn.init.zeros_(self.reconstructor.head.weight)
            nn.init.zeros_(self.reconstructor.head.bias)

    def build_noise_free(self, lr, noise):
        """clamp(lr + N~): N~ approximates the negative realized noise."""
        return torch.clamp(lr + noise, 0.0, 1.0)

    def initial_features(self, lr, noise_free):
        b, u, v = lr.shape[:3]
        cat = torch.cat([lr, noise_free], dim=3)
        return split_views(self.init_extract(merge_views(cat)), b, u, v)

    def fuse_initial(self, f_init, f_lat):
        b, u, v = f_init.shape[:3]
        cat = torch.cat([f_init, f_lat], dim=3)
        return split_views(self.fuse_init(merge_views(cat)), b, u, v)

    def degradation_inputs(self, lr):
        b, u, v, _, h, w = lr.shape
        if self.cfg.use_estimator:
            return self.estimator(lr)
        k = self.estimator.cfg.kernel_size_k
        kernels = delta_kernels((b, u, v), k, lr.dtype, lr.device)
        noise = torch.zeros(b, u, v, 3, h, w, dtype=lr.dtype, device=lr.device)
        return kernels, noise

    def forward(self, lr, bic_up=None, k_override=None, n_override=None):
        b, u, v, _, h, w = lr.shape
        if u % 2 == 0 or v % 2 == 0:
            raise ValueError(f"angular dims must be odd, got {u}x{v}")
        if bic_up is None:
            bic_up = self.bicubic_residual(lr)
        kernels, noise = self.degradation_inputs(lr)
        if k_override is not None:
            kernels = k_override
        if n_override is not None:
            noise = n_override
        latent = torch.clamp(wiener_filter(bic_up, kernels, self.cfg.fft_reg_lambda), 0.0, 1.0)
        f_lat = self.hre(latent)
        f_deg = self.embed(kernels, noise)
        noise_free = self.build_noise_free(lr, noise)
        f = self.fuse_initial(self.initial_features(lr, noise_free), f_lat)
        for block in self.blocks:
            f = block(f, f_deg)
        residual = self.reconstructor(f, (h, w))
        sr = torch.clamp(bic_up + residual, 0.0, 1.0)
        return {
            "sr": sr,
            "kernels": kernels,
            "noise": noise,
            "latent": latent,
            "residual": residual,
        }

    def bicubic_residual(self, lr):
        """Constant bicubic-upsample of an LR batch via the shared resampler."""
        data = lr.detach().cpu().double().numpy()
        ups = np.stack([bicubic_up_field(np.transpose(s, (0, 1, 3, 4, 2)), self.cfg.alpha) for s in data])
        return torch.from_numpy(np.transpose(ups, (0, 1, 2, 5, 3, 4)).copy()).to(
            dtype=lr.dtype, device=lr.device
        )

    @torch.no_grad()
    def super_resolve(self, lf, k_override=None, n_override=None):
        """Numpy-facing inference on a LightField.

        Returns (sr, k_est, n_est, latent).  The bicubic residual is added
        in float64, so with a zero reconstruction head the output equals
        clamp(bicubic-upsample(lr)) bit for bit.
        """
        dtype = next(self.parameters()).dtype
        lr = torch.from_numpy(np.transpose(lf.data, (0, 1, 4, 2, 3)).copy()).to(dtype)[None]
        bic_np = bicubic_up_field(lf.data, self.cfg.alpha)
        bic_up = torch.from_numpy(np.transpose(bic_np, (0, 1, 4, 2, 3)).copy()).to(dtype)[None]
        kw = {}
        if k_override is not None:
            kw["k_override"] = torch.from_numpy(np.asarray(k_override, dtype=np.float64)).to(dtype)[None]
        if n_override is not None:
            arr = np.transpose(np.asarray(n_override, dtype=np.float64), (0, 1, 4, 2, 3))
            kw["n_override"] = torch.from_numpy(arr.copy()).to(dtype)[None]
        out = self.forward(lr, bic_up=bic_up, **kw)
        residual = np.transpose(out["residual"][0].double().numpy(), (0, 1, 3, 4, 2))
        sr = LightField.clamped(bic_np + residual)
        k_est = KernelEstimate(out["kernels"][0].double().numpy())
        n_est = NoiseMapEstimate(np.transpose(out["noise"][0].double().numpy(), (0, 1, 3, 4, 2)))
        latent = LightField.clamped(np.transpose(out["latent"][0].double().numpy(), (0, 1, 3, 4, 2)))
        return sr, k_est, n_est, latent
