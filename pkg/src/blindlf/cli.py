"""Command-line interface.

Subcommands: degrade, estimate, infer, train, eval, sweep, report.  Scenes
on disk use the directory format of :mod:`blindlf.sceneio`; checkpoints are
the deterministic blobs of :mod:`blindlf.serialization`.
"""

import argparse
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .degradation import DegradationConfig, degrade_lightfield
from .estimator import KernelEstimate, NoiseMapEstimate
from .evaluation import (
    SweepSpec,
    bicubic_method,
    emit_report,
    model_method,
    psnr,
    report_from_csv,
    run_sweep,
    ssim,
)
from .lightfield import LightField, center_index, extract_epi
from .restoration import bicubic_up_field
from .sceneio import load_scene, save_scene
from .serialization import load_noise_map, save_noise_map
from .training import (
    PRESETS,
    TrainConfig,
    load_model,
    pretrain_estimator,
    train_joint,
)


def write_kernel_csv(path, kernel):
    np.savetxt(path, kernel, delimiter=",", fmt="%.17e")


def read_kernel_csv(path):
    return np.loadtxt(path, delimiter=",")


def write_kernel_heatmap(path, kernel):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(3, 3))
    im = ax.imshow(kernel, cmap="viridis")
    fig.colorbar(im, ax=ax, fraction=0.046)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def load_external_estimates(directory, angular_shape):
    """Read kernel CSVs plus the noise-map binary written by `estimate`."""
    directory = Path(directory)
    uu, vv = angular_shape
    kernels = np.stack(
        [
            np.stack([read_kernel_csv(directory / f"kernel_est_{u:02d}_{v:02d}.csv") for v in range(vv)])
            for u in range(uu)
        ]
    )
    noise = load_noise_map(directory / "noise_est.bin")
    return KernelEstimate(kernels), NoiseMapEstimate(noise)


def _epi_strip(lf, upscale=4):
    """Horizontal EPI at the center row, magnified for display."""
    uc, _ = center_index(lf)
    h = lf.spatial_shape[0] // 2
    epi = extract_epi(lf, "horizontal", uc, h).data
    reps = np.repeat(epi, upscale, axis=0)
    return reps


def save_panel(path, panels, labels=None):
    """Side-by-side views with EPI strips underneath, saved as one PNG."""
    from PIL import Image

    tops = [lf.data[center_index(lf)] for lf in panels]
    strips = [_epi_strip(lf) for lf in panels]
    height = max(t.shape[0] for t in tops)
    strip_h = max(s.shape[0] for s in strips)
    gap = 4
    widths = [t.shape[1] for t in tops]
    canvas = np.ones((height + gap + strip_h, sum(widths) + gap * (len(tops) - 1), 3))
    x = 0
    for top, strip in zip(tops, strips):
        h, w = top.shape[:2]
        canvas[:h, x : x + w] = top
        canvas[height + gap : height + gap + strip.shape[0], x : x + strip.shape[1]] = strip
        x += w + gap
    img = np.rint(canvas * 255.0).clip(0, 255).astype(np.uint8)
    Image.fromarray(img, mode="RGB").save(path)


def parse_kv_file(path):
    """Flat ``key = value`` config file; '#' starts a comment."""
    values = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"malformed config line: {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        values[key] = val
    return values


def _coerce(value, annotation):
    if annotation in ("int", int):
        return int(value)
    if annotation in ("float", float):
        return float(value)
    if annotation in ("bool", bool):
        return value.lower() in ("1", "true", "yes")
    if annotation in ("tuple", tuple):
        return tuple(float(x) for x in value.split(","))
    return value


def train_config_from_file(path, base):
    values = parse_kv_file(path)
    by_name = {f.name: f for f in fields(TrainConfig)}
    overrides = {}
    for key, val in values.items():
        if key not in by_name:
            raise ValueError(f"unknown TrainConfig field {key!r} in {path}")
        overrides[key] = _coerce(val, by_name[key].type)
    return replace(base, **overrides)


def sweep_spec_from_file(path):
    values = parse_kv_file(path)
    kwargs = {}
    if "kernel_widths" in values:
        kwargs["kernel_widths"] = tuple(float(x) for x in values["kernel_widths"].split(","))
    if "noise_levels" in values:
        kwargs["noise_levels"] = tuple(float(x) for x in values["noise_levels"].split(","))
    if "methods" in values:
        kwargs["methods"] = tuple(m.strip() for m in values["methods"].split(","))
    for key in ("seed", "alpha", "crop"):
        if key in values:
            kwargs[key] = int(values[key])
    return SweepSpec(**kwargs)


def cmd_degrade(args):
    hr = load_scene(args.scene)
    config = DegradationConfig(sigma=args.sigma, noise_level=args.noise, alpha=args.alpha,
                               seed=args.seed)
    lr, record = degrade_lightfield(hr, config)
    out = Path(args.out)
    save_scene(lr, out)
    (out / "degradation.json").write_text(
        json.dumps(
            {"sigma": config.sigma, "noise_level": config.noise_level,
             "alpha": config.alpha, "seed": config.seed},
            sort_keys=True, indent=2,
        )
        + "\n"
    )
    write_kernel_csv(out / "kernel.csv", record.kernels[0][0].weights)
    print(f"degraded {args.scene} -> {out} (sigma={args.sigma}, noise={args.noise})")


def cmd_estimate(args):
    model, _ = load_model(args.checkpoint)
    lr = load_scene(args.scene)
    k_est, n_est = model.estimator.estimate(lr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    uu, vv = lr.angular_shape
    for u in range(uu):
        for v in range(vv):
            write_kernel_csv(out / f"kernel_est_{u:02d}_{v:02d}.csv", k_est.kernels[u, v])
            write_kernel_heatmap(out / f"kernel_heat_{u:02d}_{v:02d}.png", k_est.kernels[u, v])
    save_noise_map(out / "noise_est.bin", n_est.maps)
    print(f"estimates written to {out}")


def cmd_infer(args):
    model, _ = load_model(args.checkpoint)
    lr = load_scene(args.scene)
    overrides = {}
    if args.external_estimates:
        k_est, n_est = load_external_estimates(args.external_estimates, lr.angular_shape)
        overrides = {"k_override": k_est.kernels, "n_override": n_est.maps}
    sr, k_est, n_est, latent = model.super_resolve(lr, **overrides)
    out = Path(args.out)
    save_scene(sr, out)
    bic = LightField(bicubic_up_field(lr.data, model.cfg.alpha), validate=False)
    panels = [bic, sr]
    if args.gt:
        panels.append(load_scene(args.gt))
    save_panel(out / "panel.png", panels)
    if args.dump_latent:
        save_scene(latent, out / "latent")
    if args.dump_estimates:
        est_dir = out / "estimates"
        est_dir.mkdir(exist_ok=True)
        uu, vv = lr.angular_shape
        for u in range(uu):
            for v in range(vv):
                write_kernel_csv(est_dir / f"kernel_est_{u:02d}_{v:02d}.csv", k_est.kernels[u, v])
        save_noise_map(est_dir / "noise_est.bin", n_est.maps)
    print(f"super-resolved {args.scene} -> {out}")


def cmd_train(args):
    train_cfg, model_cfg = PRESETS[args.preset]
    if args.config:
        train_cfg = train_config_from_file(args.config, train_cfg)
    scene_dirs = sorted(p for p in Path(args.data).iterdir() if (p / "meta.json").exists())
    if not scene_dirs:
        raise SystemExit(f"no scenes found under {args.data}")
    scenes = [load_scene(p) for p in scene_dirs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.resume:
        model, meta = load_model(args.resume)
        ckpt = args.resume
        print(f"resuming from {args.resume} at iteration {meta['iteration']}")
        train_joint(scenes, model, train_cfg, init=ckpt, out_dir=out,
                    deterministic=args.deterministic)
    else:
        from .restoration import RestorationNetwork

        model = RestorationNetwork(scenes[0].angular_shape, model_cfg, seed=train_cfg.seed)
        print(f"stage 1: estimator pretraining ({train_cfg.pretrain_iters} iters)")
        pretrain_estimator(scenes, model, train_cfg, out_dir=out,
                           deterministic=args.deterministic)
        print(f"stage 2: joint training ({train_cfg.total_iters} iters)")
        train_joint(scenes, model, train_cfg, out_dir=out, deterministic=args.deterministic)
    print(f"checkpoints and logs in {out}")


def cmd_eval(args):
    model, _ = load_model(args.checkpoint)
    hr = load_scene(args.scene)
    config = DegradationConfig(sigma=args.sigma, noise_level=args.noise,
                               alpha=model.cfg.alpha, seed=args.seed)
    lr, _ = degrade_lightfield(hr, config)
    bic = LightField(bicubic_up_field(lr.data, model.cfg.alpha), validate=False)
    sr = model.super_resolve(lr)[0]
    print(f"scene={args.scene} sigma={args.sigma} noise={args.noise} crop={args.crop}")
    print(f"bicubic  psnr={psnr(bic, hr, args.crop):.4f} ssim={ssim(bic, hr, args.crop):.5f}")
    print(f"model    psnr={psnr(sr, hr, args.crop):.4f} ssim={ssim(sr, hr, args.crop):.5f}")


def cmd_sweep(args):
    spec = sweep_spec_from_file(args.spec) if args.spec else SweepSpec()
    scenes = {}
    for p in sorted(Path(args.scenes).iterdir()):
        if (p / "meta.json").exists():
            scenes[p.name] = load_scene(p)
    if not scenes:
        raise SystemExit(f"no scenes found under {args.scenes}")
    methods = {"bicubic": lambda lr, scene_name=None: bicubic_method(lr, alpha=spec.alpha)}
    if "model" in spec.methods:
        if not args.checkpoint:
            raise SystemExit("the 'model' method needs --checkpoint")
        model, _ = load_model(args.checkpoint)
        methods["model"] = model_method(model)
    report = run_sweep(scenes, spec, methods, dataset=Path(args.scenes).name,
                       workers=args.workers)
    emit_report(report, args.out, fmt="csv")
    print(f"report written to {args.out}")
    if args.markdown:
        emit_report(report, args.markdown, fmt="markdown")
        print(f"markdown written to {args.markdown}")


def cmd_report(args):
    report = report_from_csv(Path(args.input).read_text())
    emit_report(report, args.out, fmt="markdown")
    print(f"markdown written to {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(prog="blindlf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="synthesize a degraded LR scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--noise", type=float, required=True)
    p.add_argument("--alpha", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("estimate", help="run the degradation estimator on a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("infer", help="super-resolve a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt", help="optional ground-truth scene for the comparison panel")
    p.add_argument("--dump-latent", action="store_true")
    p.add_argument("--dump-estimates", action="store_true")
    p.add_argument("--external-estimates", help="directory of kernel CSVs + noise_est.bin")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("train", help="two-stage training")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="flat key = value file with TrainConfig overrides")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--resume")
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics for one scene at one degradation")
    p.add_argument("--scene", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--noise", type=float, required=True)
    p.add_argument("--crop", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid evaluation over kernel widths and noise levels")
    p.add_argument("--scenes", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--spec", help="flat key = value sweep specification")
    p.add_argument("--out", required=True)
    p.add_argument("--markdown")
    p.add_argument("--workers", type=int, default=0)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="re-render a report CSV as markdown")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
