"""Blind light-field super-resolution lab.

Library layers:

* :mod:`blindlf.lightfield` / :mod:`blindlf.resample` / :mod:`blindlf.sceneio`
  -- the 4D container, the shared bicubic resampler, disk format
* :mod:`blindlf.degradation` -- the generative forward model and its record
* :mod:`blindlf.estimator` / :mod:`blindlf.restoration` -- the networks
* :mod:`blindlf.training` -- patch sampling, losses, two-stage training
* :mod:`blindlf.evaluation` -- metrics, synthetic scenes, sweeps, reports
* :mod:`blindlf.cli` -- the ``blindlf`` command
"""

from .degradation import (
    DegradationConfig,
    DegradationRecord,
    GaussianKernel,
    blur_view,
    degrade_lightfield,
    isotropic_gaussian_kernel,
    sample_degradation,
    self_constraint_loss,
)
from .estimator import DegradationEstimator, EstimatorConfig, KernelEstimate, NoiseMapEstimate
from .evaluation import (
    MetricReport,
    MetricRow,
    SweepSpec,
    SyntheticScene,
    emit_report,
    epi_slope,
    evaluate_scene,
    make_synthetic_scene,
    psnr,
    run_sweep,
    ssim,
)
from .lightfield import (
    Epi,
    LightField,
    augment,
    augment_field,
    center_index,
    center_view,
    crop_patch,
    extract_epi,
    get_view,
)
from .resample import bicubic_resize, bicubic_shift
from .restoration import (
    RestorationConfig,
    RestorationNetwork,
    bicubic_up_field,
    fft_deconvolve_latent,
)
from .sceneio import load_scene, save_scene
from .training import (
    PRESETS,
    PatchSample,
    TrainConfig,
    load_model,
    pretrain_estimator,
    sample_patch,
    total_loss,
    train_joint,
)

__version__ = "0.1.0"
