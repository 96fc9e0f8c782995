"""homspec: simulate and reconstruct spectrally resolved two-photon interference spectroscopy.

The package closes the loop on a virtual experiment: an analytic detection
model generates time-tagged photon-pair click streams, a streaming processor
turns them back into spectra, and calibrated estimators recover the sample's
transmission and phase for comparison against the known ground truth.
"""

from .grid import SpectralGrid, make_grid, active_half_slice, flat_half_slice
from .samples import (
    SampleResponse,
    flat_response,
    lorentzian_response,
    kramers_kronig_phase,
    confined_to_active_half,
)
from .model import (
    ArmConfig,
    BiphotonSource,
    DetectionConfig,
    MeasurementConfig,
    OutcomeProbabilities,
    SpectraSet,
    corrected_rates,
    efficiency_ratio_from_singles,
    expected_spectra,
    gaussian_source,
    hom_interferogram,
    outcome_probabilities,
    pair_amplitude,
)
from .simulate import (
    ClickEvent,
    CouplingPerturbation,
    ExposureRecord,
    apply_perturbation,
    linear_tilt,
    read_event_file,
    seed_for_exposure,
    simulate_exposure,
    write_event_file,
)
from .tags import (
    ProcessorSettings,
    accumulate,
    energy_filter,
    estimate_efficiency_ratio,
    pair_and_filter,
    pair_events,
    process_exposure,
)
from .reconstruct import (
    CampaignSpectra,
    ReconstructionResult,
    aggregate_repeats,
    differential_phase,
    estimate_cuvette_delay,
    estimate_fringe_frequency,
    estimate_transmission,
    fit_fringe_phase,
    reconstruct_repeat,
    singles_only_transmission,
    wrap_phase,
)

__version__ = "0.1.0"
