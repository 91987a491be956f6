"""Run the kernel-width x noise-level evaluation grid on synthetic scenes
with the bicubic baseline and an (untrained) restoration model, then render
the aggregate table.

Run:  python3 demos/04_sweep_report.py
"""

import numpy as np

from blindlf import SweepSpec, make_synthetic_scene, run_sweep
from blindlf.evaluation import bicubic_method, model_method, report_to_markdown
from blindlf.restoration import RestorationConfig, RestorationNetwork

scenes = {
    f"scene{i}": make_synthetic_scene(np.random.default_rng(i), (3, 3), (64, 64), 0.5).hr
    for i in range(2)
}

# an untrained model reproduces the bicubic baseline exactly (zero-initialized
# reconstruction head), so the two method rows coincide here; train a
# checkpoint with demos/05 or the CLI to see them separate
model = RestorationNetwork(
    (3, 3), RestorationConfig(n1=1, feature_channels=8, kernel_embed_dim=8, num_rcab=1), seed=0
)
methods = {
    "bicubic": lambda lr, scene_name=None: bicubic_method(lr),
    "model": model_method(model),
}

spec = SweepSpec(methods=("bicubic", "model"), seed=11)
report = run_sweep(scenes, spec, methods, workers=2)
print(f"{len(report.rows)} rows over {len(spec.kernel_widths)}x{len(spec.noise_levels)} grid")
print(report_to_markdown(report))
