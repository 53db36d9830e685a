"""Simulation and analysis of polarization entanglement formed from two
independent single photons on a beamsplitter, with post-selection."""

from .bell import ChshResult, CountTable, chsh_best, chsh_S, correlation_E, predicted_counts, qber_estimate
from .optics import (
    BosonicState,
    DegeneratePostselection,
    ModeLabel,
    SourceParams,
    WeightedEnsemble,
    apply_beamsplitter,
    hom_coincidence_prob,
    jones_element,
    oracle_rho,
    postselect_coincidence,
    prepare_source_pair,
    rho_model,
)
from .qmath import DensityMatrix, fidelity, negativity, partial_transpose, tensor_product, validate_density

__version__ = "0.1.0"
