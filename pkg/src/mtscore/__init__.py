"""Measure-transformed Gaussian quasi score test (MT-GQST) and a near-field simulator."""

__version__ = "0.1.0"

from .distributions import (
    NoiseSpec,
    SignalSpec,
    asymptotic_power,
    chi2_isf,
    chi2_sf,
    noncentral_chi2_sf,
    worst_case_power,
)
from .errors import (
    AllWeightsZero,
    DegenerateRegion,
    MTScoreError,
    NoAdmissibleWidth,
    NotPositiveDefinite,
    SingularFHat,
    SingularGHat,
)
from .score_test import (
    TestReport,
    decide,
    f_hat,
    g_hat,
    gqst,
    mt_gqst,
    r_hat,
    score_vector,
    select_width,
    spectral_norm,
    test_statistic,
)
from .simulation import DetectorSpec, Scenario, empirical_size, generate_batch, power_curve, run_trial
from .surrogate import ArrayGeometry, LocationParam, fresnel_region, steering_vector
from .transform import MTFunction, empirical_mt_cov, empirical_mt_mean, mt_weights
