"""Detector tomography and photon-number state reconstruction for nonlinear single-photon detectors."""
__version__ = "0.1.0"

from .fisher import MeasurementBudget, compare_detectors, crb_errors, fisher_matrix, linear_apd_povm
from .kernels import BACKEND
from .povm import (
    DetectorSetting,
    NonlinearResponse,
    Povm,
    assemble_povm_row,
    bernoulli_matrix,
    click_probability_coherent,
    click_probability_state,
)
from .reconstruction import ReconstructionConfig, chi_square, classify_family, em_step, reconstruct
from .simulator import NoiseModel, SyntheticDetector, fidelity_curve, simulate_surface, synthetic_response
from .states import (
    FockDistribution,
    closest_reference_state,
    coherent_distribution,
    fidelity,
    g2_zero,
    mean_photon_number,
    thermal_distribution,
)
from .tomography import CountRateSurface, TomographyFit, fit_all, fit_setting, grid_by_current
