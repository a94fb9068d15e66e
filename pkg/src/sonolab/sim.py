"""Point-scatterer pulse-echo synthesizer.

Produces raw channel data with known ground truth, which is what the test
suite beamforms to validate the reconstruction chain end to end. The delay
geometry is imported from :mod:`sonolab.ops` so that simulation and
time-of-flight correction share one code path; the shared functions are
themselves checked against hand-computed geometry in the tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from sonolab.core import Probe, Scan, TensorFrame, _readonly
from sonolab.errors import ParameterError
from sonolab.ops import receive_delay, transmit_delays

SPREADING_REFERENCE_M = 1e-3  # 1/r amplitude falloff clamps below 1 mm
PULSE_SUPPORT_SIGMAS = 5.0


@dataclass(frozen=True)
class Pulse:
    """Gabor transmit pulse: Gaussian envelope times a cosine carrier.

    The envelope width is set from the fractional bandwidth through the
    Gaussian spectrum relation sigma_f = fbw * fc / (2 sqrt(2 ln 2)), so the
    -6 dB spectral width equals fbw * fc.
    """

    center_frequency: float
    fractional_bandwidth: float = 0.6

    def __post_init__(self):
        if self.center_frequency <= 0:
            raise ParameterError("pulse center frequency must be positive")
        if not 0 < self.fractional_bandwidth <= 1:
            raise ParameterError(
                f"fractional_bandwidth must be in (0, 1], got {self.fractional_bandwidth}"
            )

    @property
    def sigma_f(self) -> float:
        return self.fractional_bandwidth * self.center_frequency / (2.0 * math.sqrt(2.0 * math.log(2.0)))

    @property
    def sigma_t(self) -> float:
        return 1.0 / (2.0 * math.pi * self.sigma_f)

    @property
    def support(self) -> float:
        """One-sided envelope support in seconds (beyond this g is negligible)."""
        return PULSE_SUPPORT_SIGMAS * self.sigma_t


def pulse_waveform(pulse: Pulse, t) -> np.ndarray:
    """g(t) = exp(-t^2 / (2 sigma_t^2)) * cos(2 pi fc t), peak normalized."""
    t = np.asarray(t, dtype=np.float64)
    env = np.exp(-(t**2) / (2.0 * pulse.sigma_t**2))
    return env * np.cos(2.0 * np.pi * pulse.center_frequency * t)


@dataclass(frozen=True)
class Phantom:
    """Collection of point scatterers plus an additive RF noise level."""

    positions: np.ndarray  # (n, 3) meters
    amplitudes: np.ndarray  # (n,)
    noise_std: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        amp = np.asarray(self.amplitudes, dtype=np.float64).reshape(-1)
        if pos.shape[0] != amp.shape[0]:
            raise ParameterError(
                f"{pos.shape[0]} positions but {amp.shape[0]} amplitudes"
            )
        if not np.all(np.isfinite(pos)) or not np.all(np.isfinite(amp)):
            raise ParameterError("scatterer positions and amplitudes must be finite")
        if self.noise_std < 0:
            raise ParameterError("noise_std must be non-negative")
        object.__setattr__(self, "positions", _readonly(pos))
        object.__setattr__(self, "amplitudes", _readonly(amp))

    @property
    def n_scatterers(self) -> int:
        return self.positions.shape[0]


def single_scatterer(x: float, z: float, amplitude: float = 1.0) -> Phantom:
    return Phantom(positions=np.array([[x, 0.0, z]]), amplitudes=np.array([amplitude]))


def load_phantom(path) -> tuple[Phantom, int]:
    """Read a phantom config (JSON, positions in millimeters); see docs/phantom.md."""
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    scatterers = cfg.get("scatterers", [])
    positions = []
    amplitudes = []
    for entry in scatterers:
        pos_mm = entry["position_mm"]
        if len(pos_mm) == 2:  # (x, z) shorthand
            pos_mm = [pos_mm[0], 0.0, pos_mm[1]]
        positions.append([p * 1e-3 for p in pos_mm])
        amplitudes.append(float(entry.get("amplitude", 1.0)))
    if not positions:
        positions = np.zeros((0, 3))
        amplitudes = np.zeros(0)
    phantom = Phantom(
        positions=np.asarray(positions, dtype=np.float64).reshape(-1, 3),
        amplitudes=np.asarray(amplitudes, dtype=np.float64),
        noise_std=float(cfg.get("noise_std", 0.0)),
    )
    return phantom, int(cfg.get("seed", 0))


def _scatterer_delays(phantom: Phantom, probe: Probe, scan: Scan):
    """tau_tx (n_tx, n_scat) and tau_rx (n_el, n_scat) via the shared geometry."""
    sx = phantom.positions[:, 0]
    sz = phantom.positions[:, 2]
    params = {
        "sound_speed": scan.sound_speed,
        "steering_angles": scan.steering_angles,
        "virtual_sources": scan.virtual_sources,
        "transmit_type": scan.transmit_type,
    }
    tau_tx = transmit_delays(sx, sz, params)
    tau_rx = np.stack(
        [receive_delay(sx, sz, el, scan.sound_speed) for el in np.asarray(probe.element_positions)]
    )
    return tau_tx, tau_rx


def required_samples(phantom: Phantom, probe: Probe, scan: Scan, pulse: Pulse) -> int:
    """Smallest record length covering every echo plus the pulse support."""
    if phantom.n_scatterers == 0:
        return 64
    tau_tx, tau_rx = _scatterer_delays(phantom, probe, scan)
    total = tau_tx[:, None, :] + tau_rx[None, :, :]  # (tx, el, scat)
    t0 = np.asarray(scan.initial_times)[:, None, None]
    latest = float((total - t0).max()) + pulse.support
    return int(math.ceil(latest * scan.sampling_frequency)) + 1


def simulate_rf(
    phantom: Phantom,
    probe: Probe,
    scan: Scan,
    pulse: Pulse,
    n_samples: int | None = None,
    seed: int = 0,
) -> TensorFrame:
    """Synthesize raw channel data for one frame.

    rf[k, e, n] = sum_s a_s * g(t_n - tau_tx(k, p_s) - tau_rx(p_s, e)) / r_s,e
    with t_n = initial_times[k] + n / fs and geometric spreading
    r = max(||p_s - r_e|| / 1 mm, 1). Gaussian noise (noise_std) is seeded per
    (tx, el) so the result is reproducible bit for bit regardless of how the
    loop is scheduled.
    """
    needed = required_samples(phantom, probe, scan, pulse)
    if n_samples is None:
        n_samples = needed
    elif n_samples < needed:
        raise ParameterError(
            f"record too short for the deepest scatterer: n_samples={n_samples}, "
            f"need n_samples >= {needed}"
        )

    n_tx, n_el = scan.n_tx, probe.n_el
    fs = scan.sampling_frequency
    t0 = np.asarray(scan.initial_times)
    rf = np.zeros((1, n_tx, n_el, n_samples), dtype=np.float64)

    if phantom.n_scatterers:
        tau_tx, tau_rx = _scatterer_delays(phantom, probe, scan)
        dist = tau_rx * scan.sound_speed  # (el, scat)
        spread = np.maximum(dist / SPREADING_REFERENCE_M, 1.0)
        amp = phantom.amplitudes[None, :] / spread  # (el, scat)
        t = np.arange(n_samples, dtype=np.float64) / fs
        for k in range(n_tx):
            for e in range(n_el):
                delays = tau_tx[k] + tau_rx[e]  # (scat,)
                shifted = (t0[k] + t)[None, :] - delays[:, None]
                echoes = pulse_waveform(pulse, shifted)  # (scat, samples)
                rf[0, k, e, :] = amp[e] @ echoes

    if phantom.noise_std > 0:
        for k in range(n_tx):
            for e in range(n_el):
                rng = np.random.default_rng([seed, k, e])
                rf[0, k, e, :] += rng.normal(0.0, phantom.noise_std, n_samples)

    return TensorFrame(data=rf, axes=("frame", "tx", "el", "sample"))
