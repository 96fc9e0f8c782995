import numpy as np
import pytest

from homspec import make_grid
from homspec.model import ArmConfig, DetectionConfig, MeasurementConfig, gaussian_source


@pytest.fixture
def grid16():
    return make_grid(810.0, 155.0, 16)


@pytest.fixture
def grid256():
    return make_grid(810.0, 155.0, 256)


def random_measurement_config(
    grid,
    rng,
    pair_probability=0.01,
    mode_overlap=None,
    pair_rate=1e5,
    exposure=1.0,
    flat_partner_half=False,
):
    """Random but physically valid configuration for property tests.

    With flat_partner_half=True the sample acts only on the short-wavelength
    half, the setting the calibrated estimators assume.
    """
    n = grid.n_bins
    amp = rng.uniform(0.2, 1.0, n // 2)
    amp = np.concatenate([amp, amp[::-1]])
    amp = amp / np.sqrt(np.sum(amp**2))
    source = gaussian_source(grid, pair_probability)
    source.spectral_amplitude = amp  # keep normalization exact
    source = type(source)(grid, pair_probability, amp)

    theta = rng.uniform(0.0, 1.5, n)
    phi = rng.uniform(-1.0, 1.0, n)
    if flat_partner_half:
        theta[: n // 2] = 0.0
        phi[: n // 2] = 0.0
    arms = ArmConfig(
        grid=grid,
        scattering_loss=rng.uniform(0.0, 0.3, n),
        sample_absorbance=theta,
        sample_phase=phi,
        reference_transmission=rng.uniform(0.5, 1.0, n),
        stage_delay_s=rng.uniform(-50e-15, 50e-15),
        cuvette_delay_s=rng.uniform(-20e-15, 20e-15),
    )
    detection = DetectionConfig(
        grid=grid,
        efficiency_a=rng.uniform(0.05, 0.9, n),
        efficiency_b=rng.uniform(0.05, 0.9, n),
        mode_overlap=rng.uniform(0.0, 1.0) if mode_overlap is None else mode_overlap,
        dark_rate_hz=0.0,
    )
    return MeasurementConfig(
        source=source,
        arms=arms,
        detection=detection,
        exposure_seconds=exposure,
        pair_generation_rate=pair_rate,
    )
