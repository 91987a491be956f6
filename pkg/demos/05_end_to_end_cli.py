"""Exercise every CLI subcommand on a tiny self-contained workspace:
write a synthetic scene to disk, train briefly at desk scale, degrade,
estimate, super-resolve, evaluate, and sweep.

Takes ~10 minutes on CPU (dominated by the short training run).
Run:  python3 demos/05_end_to_end_cli.py [workdir]
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from blindlf import make_synthetic_scene, save_scene
from blindlf.cli import main

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="blindlf_"))
print(f"workspace: {root}")

scene = make_synthetic_scene(np.random.default_rng(0), (3, 3), (192, 192), 0.8).hr
save_scene(scene, root / "scenes" / "demo")

config = root / "train.cfg"
config.write_text("pretrain_iters = 100\ntotal_iters = 300\nseed = 0\n")
main(["train", "--data", str(root / "scenes"), "--out", str(root / "run"),
      "--preset", "desk", "--config", str(config)])

main(["degrade", "--scene", str(root / "scenes" / "demo"), "--sigma", "1.5",
      "--noise", "15", "--seed", "3", "--out", str(root / "lr")])

main(["estimate", "--scene", str(root / "lr"),
      "--checkpoint", str(root / "run" / "joint.ckpt"), "--out", str(root / "estimates")])

main(["infer", "--scene", str(root / "lr"),
      "--checkpoint", str(root / "run" / "joint.ckpt"), "--out", str(root / "sr"),
      "--gt", str(root / "scenes" / "demo"), "--dump-latent"])

main(["eval", "--scene", str(root / "scenes" / "demo"),
      "--checkpoint", str(root / "run" / "joint.ckpt"), "--sigma", "1.5", "--noise", "15"])

spec = root / "sweep.cfg"
spec.write_text("methods = bicubic,model\nnoise_levels = 0,15\n")
main(["sweep", "--scenes", str(root / "scenes"),
      "--checkpoint", str(root / "run" / "joint.ckpt"), "--spec", str(spec),
      "--out", str(root / "report.csv"), "--markdown", str(root / "report.md")])

print(f"\nartifacts under {root}: run/, lr/, estimates/, sr/, report.csv, report.md")
