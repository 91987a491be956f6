"""Metrics, synthetic test scenes, the degradation sweep, and report emitters.

PSNR is computed over all views, pixels, and RGB channels jointly; SSIM is
the standard single-scale form (11x11 Gaussian window, sigma 1.5, K1=0.01,
K2=0.03, dynamic range 1) per view and channel, averaged over channels then
views.  Both default to no border crop; the crop used is recorded in the
report metadata.
"""

import csv
import io
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.signal import fftconvolve

from .degradation import DegradationConfig, degrade_lightfield
from .lightfield import LightField, center_index, extract_epi
from .resample import bicubic_shift
from .restoration import bicubic_up_field

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

CSV_COLUMNS = ["dataset", "scene", "kernel_width", "noise_level", "method", "psnr_db", "ssim"]


def _cropped(a, b, crop):
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    da, db = a.data, b.data
    if crop:
        if crop >= min(a.spatial_shape) // 2:
            raise ValueError(f"crop {crop} too large for spatial shape {a.spatial_shape}")
        da = da[:, :, crop:-crop, crop:-crop]
        db = db[:, :, crop:-crop, crop:-crop]
    return da, db


def psnr(a, b, crop=0):
    """Peak signal-to-noise ratio in dB, capped at 100 for identical inputs."""
    da, db = _cropped(a, b, crop)
    mse = float(np.mean((da - db) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(1.0 / mse)))


def ssim_window():
    ax = np.arange(SSIM_WINDOW, dtype=np.float64) - (SSIM_WINDOW - 1) / 2
    g = np.exp(-(ax**2) / (2.0 * SSIM_SIGMA**2))
    win = np.outer(g, g)
    return win / win.sum()


def _ssim_plane(x, y, win):
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    mu_x = fftconvolve(x, win, mode="valid")
    mu_y = fftconvolve(y, win, mode="valid")
    xx = fftconvolve(x * x, win, mode="valid") - mu_x**2
    yy = fftconvolve(y * y, win, mode="valid") - mu_y**2
    xy = fftconvolve(x * y, win, mode="valid") - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def ssim(a, b, crop=0):
    """Mean structural similarity, per channel then per view."""
    da, db = _cropped(a, b, crop)
    if min(da.shape[2], da.shape[3]) < SSIM_WINDOW:
        raise ValueError(
            f"spatial extent {da.shape[2]}x{da.shape[3]} smaller than the "
            f"{SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    win = ssim_window()
    uu, vv = da.shape[:2]
    values = [
        np.mean([_ssim_plane(da[u, v, :, :, c], db[u, v, :, :, c], win) for c in range(3)])
        for u in range(uu)
        for v in range(vv)
    ]
    return float(np.mean(values))


@dataclass(frozen=True)
class MetricRow:
    dataset: str
    scene: str
    kernel_width: float
    noise_level: float
    method: str
    psnr_db: float
    ssim: float

    @property
    def failed(self):
        return not (np.isfinite(self.psnr_db) and np.isfinite(self.ssim))


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def aggregates(self):
        """Mean PSNR/SSIM per (dataset, kernel, noise, method), failed rows excluded."""
        groups = {}
        for row in self.rows:
            if row.failed:
                continue
            key = (row.dataset, row.kernel_width, row.noise_level, row.method)
            groups.setdefault(key, []).append(row)
        return {
            key: (
                float(np.mean([r.psnr_db for r in rows])),
                float(np.mean([r.ssim for r in rows])),
            )
            for key, rows in groups.items()
        }


@dataclass(frozen=True)
class SweepSpec:
    kernel_widths: tuple = (0.0, 1.5, 3.0, 4.5)
    noise_levels: tuple = (0.0, 15.0, 50.0)
    methods: tuple = ("bicubic", "model")
    seed: int = 0
    alpha: int = 4
    crop: int = 0

    def __post_init__(self):
        if not self.kernel_widths or not self.noise_levels or not self.methods:
            raise ValueError("sweep grids must be non-empty")


@dataclass(frozen=True)
class SyntheticScene:
    name: str
    hr: LightField
    disparity: float


def make_base_texture(rng, height, width):
    """Seeded multi-frequency pattern with sharp edges.

    A 1/f-spectrum random field (photographic-like statistics) with a few
    high-contrast blocks dropped in, then band-limited to ~1.5 px edge
    width: ideal step edges on the integer grid would make sub-pixel view
    shifts unrepresentable, whereas real optical content is lens-limited.
    """
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.rfftfreq(width)[None, :]
    amplitude = 1.0 / (np.hypot(fy, fx) + 1.0 / max(height, width)) ** 1.2
    channels = []
    for _ in range(3):
        spectrum = amplitude * (
            rng.standard_normal(amplitude.shape) + 1j * rng.standard_normal(amplitude.shape)
        )
        channels.append(np.fft.irfft2(spectrum, s=(height, width)))
    base = np.stack(channels, axis=-1)
    base -= base.min()
    base /= base.max()
    for _ in range(6):
        t = rng.integers(0, max(height - 8, 1))
        l = rng.integers(0, max(width - 8, 1))
        bh = int(rng.integers(5, max(height // 5, 6)))
        bw = int(rng.integers(5, max(width // 5, 6)))
        base[t : t + bh, l : l + bw] = rng.uniform(0.05, 0.95, size=3)
    base = gaussian_filter(base, (0.7, 0.7, 0))
    return 0.02 + 0.96 * np.clip(base, 0.0, 1.0)


def make_synthetic_scene(rng, angular, spatial, disparity, name="synthetic"):
    """Procedural scene: a shared texture shifted per view by the disparity.

    View (u, v) sees the base texture translated by disparity * (u-uc, v-vc)
    pixels (sub-pixel shifts via the bicubic kernel), then cropped to the
    valid region, so adjacent views are exact disparity-shifted copies.
    """
    uu, vv = angular
    hh, ww = spatial
    uc, vc = (uu - 1) / 2.0, (vv - 1) / 2.0
    max_shift = abs(disparity) * max(uc, vc)
    margin = int(np.ceil(max_shift)) + 3
    if hh <= 2 * margin or ww <= 2 * margin:
        raise ValueError(
            f"spatial {hh}x{ww} leaves no valid region for shift margin {margin}"
        )
    base = make_base_texture(rng, hh + 2 * margin, ww + 2 * margin)
    views = np.empty((uu, vv, hh, ww, 3))
    for u in range(uu):
        for v in range(vv):
            shifted = bicubic_shift(base, disparity * (u - uc), disparity * (v - vc))
            views[u, v] = shifted[margin : margin + hh, margin : margin + ww]
    return SyntheticScene(name=name, hr=LightField.clamped(views), disparity=disparity)


def _xcorr_peak(a, b, upsample=16):
    """Sub-pixel lag of the cross-correlation peak of b against a.

    The cross spectrum is zero-padded (band-limited interpolation of the
    correlation), which avoids the bias a three-point parabola has on
    sharp-textured signals.
    """
    size = 2 * len(a)
    cross = np.fft.rfft(b, size) * np.conj(np.fft.rfft(a, size))
    corr = np.fft.fftshift(np.fft.irfft(cross, size * upsample))
    peak = int(np.argmax(corr))
    y0, y1, y2 = corr[peak - 1 : peak + 2]
    den = y0 - 2 * y1 + y2
    frac = 0.5 * (y0 - y2) / den if den != 0 else 0.0
    return (peak + frac - size * upsample // 2) / upsample


def epi_slope(lf, n_probes=6, rng=None):
    """Estimate px/view disparity from horizontal EPI line slopes.

    Each adjacent EPI row pair contributes one correlation-peak shift
    estimate (rows mean-removed and Hann-windowed first); the mean over
    probe rows is the slope.
    """
    rng = rng or np.random.default_rng(0)
    hh, ww = lf.spatial_shape
    vv = lf.angular_shape[1]
    uc, _ = center_index(lf)
    window = np.hanning(ww)
    shifts = []
    for _ in range(n_probes):
        h = int(rng.integers(hh // 4, 3 * hh // 4))
        epi = extract_epi(lf, "horizontal", uc, h)
        gray = epi.data.mean(axis=-1)
        gray = (gray - gray.mean(axis=1, keepdims=True)) * window
        for v in range(vv - 1):
            shifts.append(_xcorr_peak(gray[v], gray[v + 1]))
    return float(np.mean(shifts))


def bicubic_method(lr, scene_name=None, alpha=4):
    """The baseline: per-view bicubic upsampling."""
    return LightField(bicubic_up_field(lr.data, alpha), validate=False)


def model_method(model):
    """Wrap a restoration network as a sweep method."""

    def run(lr, scene_name=None, alpha=None):
        return model.super_resolve(lr)[0]

    return run


def external_directory_method(root):
    """Directory-protocol hook: read pre-computed SR scenes from disk."""
    from .sceneio import load_scene

    def run(lr, scene_name=None, alpha=None):
        if scene_name is None:
            raise ValueError("external SR method needs the scene name")
        return load_scene(f"{root}/{scene_name}")

    return run


def row_seed(base_seed, scene_name, kernel_width, noise_level):
    """Stable per-row seed from (seed, scene, kernel, noise)."""
    tag = zlib.crc32(scene_name.encode("utf-8"))
    return np.random.SeedSequence(
        (base_seed, tag, int(round(kernel_width * 1000)), int(round(noise_level * 1000)))
    ).generate_state(1)[0]


def evaluate_scene(hr, method, config, method_name="method", scene_name="scene",
                   dataset="synthetic", crop=0):
    """Degrade a scene, run one method, and emit a metric row.

    A method failure (exception or wrong output shape) yields a row with NaN
    metrics instead of aborting the caller's sweep.
    """
    lr, _ = degrade_lightfield(hr, config)
    try:
        sr = method(lr, scene_name=scene_name)
        p = psnr(sr, hr, crop=crop)
        s = ssim(sr, hr, crop=crop)
    except Exception:
        p = s = float("nan")
    return MetricRow(
        dataset=dataset,
        scene=scene_name,
        kernel_width=config.sigma,
        noise_level=config.noise_level,
        method=method_name,
        psnr_db=p,
        ssim=s,
    )


def run_sweep(scenes, spec, methods, dataset="synthetic", workers=0):
    """Full grid: scenes x kernel widths x noise levels x methods.

    ``scenes`` maps scene name to LightField; ``methods`` maps method name
    to a callable ``(lr, scene_name=...) -> LightField``.  Per-row seeds
    derive from (spec.seed, scene, kernel, noise), so serial and parallel
    execution produce identical reports.
    """
    if not scenes:
        raise ValueError("run_sweep needs at least one scene")
    missing = [m for m in spec.methods if m not in methods]
    if missing:
        raise ValueError(f"methods not registered: {missing}")
    tasks = [
        (name, kw, nl, mname)
        for name in sorted(scenes)
        for kw in spec.kernel_widths
        for nl in spec.noise_levels
        for mname in spec.methods
    ]

    def run_one(task):
        name, kw, nl, mname = task
        config = DegradationConfig(
            sigma=kw, noise_level=nl, alpha=spec.alpha,
            seed=int(row_seed(spec.seed, name, kw, nl)),
        )
        return evaluate_scene(
            scenes[name], methods[mname], config,
            method_name=mname, scene_name=name, dataset=dataset, crop=spec.crop,
        )

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_one, tasks))
    else:
        rows = [run_one(t) for t in tasks]
    rows.sort(key=lambda r: (r.dataset, r.scene, r.kernel_width, r.noise_level, r.method))
    metadata = {
        "seed": spec.seed,
        "crop": spec.crop,
        "alpha": spec.alpha,
        "views": "all",
        "ssim_averaging": "channel-then-view",
    }
    return MetricReport(rows=rows, metadata=metadata)


def report_to_csv(report):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in report.rows:
        writer.writerow(
            [row.dataset, row.scene, repr(float(row.kernel_width)), repr(float(row.noise_level)),
             row.method, repr(float(row.psnr_db)), repr(float(row.ssim))]
        )
    return buf.getvalue()


def report_from_csv(text):
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV columns {header}")
    rows = [
        MetricRow(
            dataset=r[0], scene=r[1], kernel_width=float(r[2]), noise_level=float(r[3]),
            method=r[4], psnr_db=float(r[5]), ssim=float(r[6]),
        )
        for r in reader
    ]
    return MetricReport(rows=rows)


def report_to_markdown(report):
    """Render aggregate cells as 'PSNR/SSIM' blocks per kernel width."""
    agg = report.aggregates()
    if not agg:
        return "(no successful rows)\n"
    datasets = sorted({k[0] for k in agg})
    kernels = sorted({k[1] for k in agg})
    noises = sorted({k[2] for k in agg})
    methods = sorted({k[3] for k in agg})
    lines = []
    if report.metadata:
        tagged = ", ".join(f"{k}={v}" for k, v in sorted(report.metadata.items()))
        lines += [f"_{tagged}_", ""]
    for ds in datasets:
        lines.append(f"### {ds}")
        lines.append("")
        header = ["Method", "Kernel"] + [f"noise {n:g}" for n in noises]
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "---|" * len(header))
        for kw in kernels:
            for m in methods:
                cells = []
                for n in noises:
                    val = agg.get((ds, kw, n, m))
                    cells.append(f"{val[0]:.2f}/{val[1]:.3f}" if val else "-")
                lines.append("| " + " | ".join([m, f"{kw:g}"] + cells) + " |")
        lines.append("")
    return "\n".join(lines)


def emit_report(report, path, fmt="csv"):
    """Write the report to disk as CSV or markdown."""
    if fmt == "csv":
        text = report_to_csv(report)
    elif fmt == "markdown":
        text = report_to_markdown(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    with open(path, "w") as fh:
        fh.write(text)
    return path
