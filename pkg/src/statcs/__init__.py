"""Statistical compressive sensing toolkit.

Linear MAP decoding of Gaussian signals from compressive measurements,
empirical estimation of average-error performance constants, and a
piecewise linear Gaussian-mixture decoder for image patches.
"""

from .analysis import (
    DecayProfile,
    DegenerateSupportError,
    EstimationError,
    MonteCarloMse,
    NullSpaceCheck,
    RatioCurve,
    RatioPoint,
    RipExpectationReport,
    error_decay_profile,
    linear_rip_constant,
    monte_carlo_mse,
    null_space_equality_check,
    ratio_vs_alpha,
    ratio_vs_k,
    rip_expectation_constants,
    sampled_signal_mse,
)
from .decoder import (
    DecodeResult,
    SingularGramError,
    error_covariance,
    map_decode,
    map_decode_batch,
    mse_closed_form,
)
from .gaussian_model import (
    SpectralGaussian,
    Spectrum,
    best_k_term_mse,
    fit_gaussian,
    power_decay_spectrum,
    sample,
)
from .gmm import (
    EmTrace,
    EvidenceError,
    GmmModel,
    PatchMeasurement,
    component_log_evidence,
    e_step,
    init_directional,
    load_gmm,
    m_step,
    map_em_decode,
    save_gmm,
)
from .imaging import (
    CoverageError,
    GrayImage,
    PatchGrid,
    PgmFormatError,
    extract_patches,
    psnr,
    read_pgm,
    reassemble,
    reconstruct_image,
    sense_image,
    write_pgm,
)
from .rng import SeededRng
from .sensing import (
    Basis,
    SensingMatrix,
    bernoulli_matrix,
    compose,
    dct_basis,
    gaussian_matrix,
    identity_basis,
    sense,
    subsampling_matrix,
)

__version__ = "0.1.0"
