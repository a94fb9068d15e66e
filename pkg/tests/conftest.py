import numpy as np
import pytest

from sonolab import Scan, TensorFrame, linear_probe, write_file
from sonolab.sim import Pulse, simulate_rf, single_scatterer


@pytest.fixture(scope="session")
def small_probe():
    return linear_probe(32, 0.3e-3)


@pytest.fixture(scope="session")
def small_scan():
    return Scan(
        sound_speed=1540.0,
        center_frequency=5e6,
        sampling_frequency=20e6,
        n_tx=3,
        steering_angles=np.deg2rad([-10.0, 0.0, 10.0]),
        initial_times=0.0,
        xlims=(-8e-3, 8e-3),
        zlims=(2e-3, 30e-3),
        grid_shape=(70, 50),
    )


@pytest.fixture(scope="session")
def small_pulse():
    return Pulse(center_frequency=5e6, fractional_bandwidth=0.6)


@pytest.fixture(scope="session")
def small_rf(small_probe, small_scan, small_pulse):
    """One off-axis scatterer, enough signal to exercise the whole chain."""
    phantom = single_scatterer(1e-3, 18e-3)
    return simulate_rf(phantom, small_probe, small_scan, small_pulse)


@pytest.fixture()
def image_container(tmp_path, small_probe, small_scan):
    """Container holding a 3-frame dB image stack under data/image."""
    rng = np.random.default_rng(11)
    images = rng.uniform(-60.0, 0.0, size=(3, 40, 32)).astype(np.float32)
    path = tmp_path / "images.h5"
    write_file(
        path,
        small_probe,
        small_scan,
        {"image": TensorFrame(data=images, axes=("frame", "z", "x"))},
    )
    return path, images
