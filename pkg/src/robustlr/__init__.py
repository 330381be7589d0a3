"""Filter-based robust linear regression and hard-instance generators."""

from .errors import *  # noqa: F401,F403
from .filter_basic import BasicFilterConfig, estimate_basic, estimate_boosted, filter_basic_step
from .filter_main import MainFilterConfig, estimate_main, filter_main_step, ols
from .model import (
    Dataset,
    Estimate,
    Filtered,
    LabeledSample,
    RegressionInstance,
    SpikedCovariance,
    dataset_from_rows,
    ell2_error,
    sigma_y,
)
from .robust_stats import (
    robust_scale_iqr,
    sym_diff_progress,
    threshold_search,
    top_eigenpair,
    verify_good_set,
    verify_representative,
    yx_moments,
)
from .sq_hard import (
    HardInstanceSpec,
    MixtureSpec,
    StatOracle,
    a_mu,
    chi2_correlation_gaussians,
    chi2_gaussians,
    chi2_mixture,
    hard_instance,
    mixture_p1,
    mixture_p2,
    mixture_p3,
    mixture_p4,
)
from .synth import AdaptiveShift, AdversarySpec, GaussianNoise, HuberAdditive, LabelFlip, NoAdversary, corrupt, generate_clean, whiten

__version__ = "0.1.0"
