"""Signal-processing and beamforming kernels.

Each kernel is a pure function on plain arrays, usable standalone; the
Operation subclasses at the bottom adapt them to labeled tensors so they can
be chained in a pipeline. Sample-axis layout for channel data is
(frame, tx, el, sample); beamformed tensors carry a flattened "pixel" axis
until the final reshape to (frame, z, x).
"""

from __future__ import annotations

from typing import Mapping

import numpy as np
from scipy import signal

from sonolab.core import ParameterBag, TensorFrame
from sonolab.errors import DegenerateInputError, ParameterError
from sonolab.pipeline import Operation

DEMOD_FIR_TAPS = 63


# ---------------------------------------------------------------------------
# propagation delays (shared with the simulator; keep these the single source
# of truth for time-of-flight geometry)
# ---------------------------------------------------------------------------

def plane_wave_transmit_delay(pixel_x, pixel_z, angle, sound_speed):
    """One-way delay from a steered plane wave to each pixel.

    The wavefront crosses the array origin at t = 0 and travels along
    (sin(angle), cos(angle)), so a pixel p is insonified at
    (z_p cos(angle) + x_p sin(angle)) / c. Negative values are legitimate
    for pixels the wavefront passes before the origin.
    """
    return (pixel_z * np.cos(angle) + pixel_x * np.sin(angle)) / sound_speed


def virtual_source_transmit_delay(pixel_x, pixel_z, source, sound_speed, kind):
    """One-way transmit delay for focused / diverging (virtual source) waves.

    Time zero is when the wavefront passes the array origin. For a diverging
    wave the source sits behind the array; for a focused wave the field
    converges onto the source and re-diverges past it.
    """
    vx, _, vz = (float(source[0]), float(source[1]), float(source[2]))
    dist = np.hypot(pixel_x - vx, pixel_z - vz)
    vnorm = float(np.hypot(vx, vz))
    if kind == "diverging":
        return (dist - vnorm) / sound_speed
    if kind == "focused":
        return (vnorm + np.sign(pixel_z - vz) * dist) / sound_speed
    raise ParameterError(f"unknown virtual-source transmit kind {kind!r}")


def receive_delay(pixel_x, pixel_z, element_position, sound_speed):
    """One-way delay from a pixel back to one element (pixels lie at y = 0)."""
    ex, ey, ez = (
        float(element_position[0]),
        float(element_position[1]),
        float(element_position[2]),
    )
    return np.sqrt((pixel_x - ex) ** 2 + ey**2 + (pixel_z - ez) ** 2) / sound_speed


def transmit_delays(pixel_x, pixel_z, params: Mapping) -> np.ndarray:
    """Stack of per-transmit one-way delays, shape (n_tx, n_pixels)."""
    px = np.asarray(pixel_x, dtype=np.float64).reshape(-1)
    pz = np.asarray(pixel_z, dtype=np.float64).reshape(-1)
    angles = params.get("steering_angles")
    sources = params.get("virtual_sources")
    c = float(params["sound_speed"])
    if angles is not None:
        angles = np.asarray(angles).reshape(-1)
        return np.stack([plane_wave_transmit_delay(px, pz, a, c) for a in angles])
    if sources is not None:
        kind = params.get("transmit_type", "diverging")
        sources = np.asarray(sources).reshape(-1, 3)
        return np.stack(
            [virtual_source_transmit_delay(px, pz, s, c, kind) for s in sources]
        )
    raise ParameterError("need steering_angles or virtual_sources to compute delays")


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def lowpass_taps(cutoff_hz: float, fs: float, numtaps: int = DEMOD_FIR_TAPS) -> np.ndarray:
    """Linear-phase Hamming windowed-sinc low-pass used by demodulation."""
    return signal.firwin(numtaps, cutoff_hz, fs=fs, window="hamming")


def demodulate(rf, fc, fs, decimation: int = 1, t0=0.0):
    """Mix RF down to complex baseband, low-pass, and decimate.

    y[n] = LPF(rf[n] * exp(-i 2 pi fc t_n)) with t_n = t0 + n / fs, filtered by
    a 63-tap Hamming windowed-sinc with cutoff fc / 2. The FIR group delay is
    compensated so y stays time-aligned with rf; decimation keeps samples
    0, d, 2d, ... giving floor(n / d) output samples. t0 may be a scalar or an
    array broadcastable against the leading axes of rf (e.g. per-transmit
    start times shaped (n_tx, 1, 1) for (frame, tx, el, sample) input).
    """
    rf = np.asarray(rf)
    if fs <= 0:
        raise ParameterError("sampling frequency must be positive")
    if not 0 < fc < fs / 2:
        raise ParameterError(
            f"demodulation frequency {fc:g} Hz must lie in (0, fs/2) = (0, {fs / 2:g}) Hz"
        )
    decimation = int(decimation)
    if decimation < 1:
        raise ParameterError(f"decimation must be >= 1, got {decimation}")

    n = rf.shape[-1]
    t = np.arange(n, dtype=np.float64) / fs
    mixer = np.exp(-2j * np.pi * fc * (np.asarray(t0, dtype=np.float64) + t))
    mixed = rf * mixer

    taps = lowpass_taps(fc / 2.0, fs)
    shaped = taps.reshape((1,) * (mixed.ndim - 1) + (taps.size,))
    delay = (taps.size - 1) // 2
    filtered = signal.fftconvolve(mixed, shaped, mode="full", axes=-1)
    filtered = filtered[..., delay : delay + n]

    out = filtered[..., : (n // decimation) * decimation : decimation]
    if rf.dtype == np.float32:
        out = out.astype(np.complex64)
    return out


def _interp_along_samples(channel: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Linear interpolation of channel (..., n_samples) at fractional indices s.

    Indices outside [0, n_samples - 1] contribute zero (zero-fill contract).
    """
    n = channel.shape[-1]
    valid = (s >= 0.0) & (s <= n - 1)
    i0 = np.clip(np.floor(s).astype(np.intp), 0, max(n - 2, 0))
    frac = s - i0
    lo = channel[..., i0]
    hi = channel[..., np.minimum(i0 + 1, n - 1)]
    vals = lo + (hi - lo) * frac
    return np.where(valid, vals, 0.0)


def tof_correct(
    iq,
    *,
    pixel_x,
    pixel_z,
    element_positions,
    sound_speed,
    sampling_frequency,
    demodulation_frequency,
    initial_times=0.0,
    steering_angles=None,
    virtual_sources=None,
    transmit_type="plane_wave",
):
    """Align demodulated channel data onto the pixel grid.

    For pixel p, transmit k, element e the round trip is
    tau = tau_tx(k, p) + tau_rx(p, e); the fractional receive sample is
    s = (tau - initial_times[k]) * fs and the channel is linearly
    interpolated there. Because the data is at baseband, each sample is
    rotated by exp(+i 2 pi fd tau) to restore carrier phase, which is what
    makes the later sum across elements coherent. Out-of-window samples are
    zero.

    Input (frame, tx, el, sample), output (frame, tx, el, pixel).
    """
    iq = np.asarray(iq)
    if iq.ndim != 4:
        raise ParameterError(f"expected (frame, tx, el, sample) input, got shape {iq.shape}")
    px = np.asarray(pixel_x, dtype=np.float64).reshape(-1)
    pz = np.asarray(pixel_z, dtype=np.float64).reshape(-1)
    elements = np.asarray(element_positions, dtype=np.float64).reshape(-1, 3)
    n_frames, n_tx, n_el, _ = iq.shape
    if elements.shape[0] != n_el:
        raise ParameterError(
            f"element_positions has {elements.shape[0]} elements, data has {n_el}"
        )
    fs = float(sampling_frequency)
    fd = float(demodulation_frequency)
    t0 = np.asarray(initial_times, dtype=np.float64).reshape(-1)
    if t0.size == 1:
        t0 = np.full(n_tx, t0[0])

    params = {
        "sound_speed": sound_speed,
        "steering_angles": steering_angles,
        "virtual_sources": virtual_sources,
        "transmit_type": transmit_type,
    }
    tau_tx = transmit_delays(px, pz, params)
    if tau_tx.shape[0] != n_tx:
        raise ParameterError(
            f"{tau_tx.shape[0]} transmit delays for data with {n_tx} transmits"
        )

    out = np.zeros((n_frames, n_tx, n_el, px.size), dtype=iq.dtype)
    omega = 2.0 * np.pi * fd
    for k in range(n_tx):
        for e in range(n_el):
            tau = tau_tx[k] + receive_delay(px, pz, elements[e], sound_speed)
            s = (tau - t0[k]) * fs
            vals = _interp_along_samples(iq[:, k, e, :], s)
            out[:, k, e, :] = vals * np.exp(1j * omega * tau)
    return out


def _half_cosine(distance, start, stop):
    """Raised-cosine rolloff from 1 at ``start`` to 0 at ``stop`` (elementwise)."""
    span = stop - start
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(span > 0, (distance - start) / np.where(span > 0, span, 1.0), 1.0)
    u = np.clip(u, 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * u))


def receive_apodization(pixel_x, pixel_z, element_x, f_number):
    """Per-(element, pixel) receive weight from the f-number aperture rule.

    An element contributes when it lies within the half-aperture
    z / (2 F#) of the pixel's lateral position; the outer 20% of that
    half-width tapers to zero with a raised cosine.
    """
    if f_number <= 0:
        raise ParameterError(f"f_number must be positive, got {f_number}")
    d = np.abs(element_x[:, None] - pixel_x[None, :])
    half = pixel_z[None, :] / (2.0 * f_number)
    inner = 0.8 * half
    w = np.where(d <= inner, 1.0, 0.0)
    taper = (d > inner) & (d <= half)
    if np.any(taper):
        w = np.where(taper, _half_cosine(d, inner, half), w)
    return w


def transmit_field_weight(pixel_x, pixel_z, angle, element_x):
    """Geometric insonification weight for one steered plane wave.

    A pixel is inside the transmit field when it falls in the aperture
    sheared along the steering direction,
    x in [min_el + z tan(angle), max_el + z tan(angle)]; outside, the weight
    rolls off to zero with a raised cosine over 10% of the aperture width.
    """
    lo = element_x.min() + pixel_z * np.tan(angle)
    hi = element_x.max() + pixel_z * np.tan(angle)
    roll = 0.1 * (element_x.max() - element_x.min())
    below = np.clip(lo - pixel_x, 0.0, None)
    above = np.clip(pixel_x - hi, 0.0, None)
    outside = np.maximum(below, above)
    w = np.where(outside == 0.0, 1.0, 0.0)
    taper = (outside > 0.0) & (outside <= roll)
    if np.any(taper):
        w = np.where(taper, _half_cosine(outside, 0.0, roll), w)
    return w


def pfield_weight(
    aligned,
    *,
    pixel_x,
    pixel_z,
    element_positions,
    f_number=1.0,
    steering_angles=None,
    **_,
):
    """Apply transmit-field and receive-aperture weights to aligned data.

    Multiplies each (tx, el, pixel) entry by w_tx(k, p) * w_rx(p, e). The
    transmit weight models which pixels a steered plane wave actually
    insonifies; the receive weight is conventional f-number apodization.
    For non-plane-wave transmits the transmit weight is 1.
    """
    aligned = np.asarray(aligned)
    px = np.asarray(pixel_x, dtype=np.float64).reshape(-1)
    pz = np.asarray(pixel_z, dtype=np.float64).reshape(-1)
    element_x = np.asarray(element_positions, dtype=np.float64).reshape(-1, 3)[:, 0]
    w_rx = receive_apodization(px, pz, element_x, float(f_number))

    if steering_angles is not None:
        angles = np.asarray(steering_angles).reshape(-1)
        w_tx = np.stack([transmit_field_weight(px, pz, a, element_x) for a in angles])
    else:
        w_tx = np.ones((aligned.shape[1], px.size))

    weights = (w_tx[:, None, :] * w_rx[None, :, :]).astype(
        np.float32 if aligned.dtype in (np.complex64, np.float32) else np.float64
    )
    return aligned * weights[None, ...]


def delay_and_sum(aligned, grid_shape=None):
    """Coherent sum over elements then transmits.

    out[f, p] = sum_k sum_e aligned[f, k, e, p] with a fixed reduction order
    (inner sum over elements, outer over transmits) so repeated runs are
    bit-identical. When grid_shape matches the pixel count the result is
    reshaped to (frame, z, x).
    """
    aligned = np.asarray(aligned)
    if aligned.ndim != 4:
        raise ParameterError(f"expected (frame, tx, el, pixel) input, got shape {aligned.shape}")
    out = aligned.sum(axis=2).sum(axis=1)
    if grid_shape is not None:
        n_z, n_x = int(grid_shape[0]), int(grid_shape[1])
        if out.shape[-1] == n_z * n_x:
            out = out.reshape(out.shape[:-1] + (n_z, n_x))
    return out


def envelope(x):
    """Elementwise magnitude of the beamformed signal."""
    return np.abs(np.asarray(x))


def normalize(x):
    """Scale to unit maximum, frame by frame (axis 0 indexes frames).

    Pass ``img[None]`` to normalize a single unbatched image. All-zero
    frames are rejected rather than silently producing NaN.
    """
    x = np.asarray(x)
    if x.ndim < 2:
        peak = x.max() if x.size else 0.0
        if peak <= 0:
            raise DegenerateInputError("cannot normalize an all-zero signal")
        return x / peak
    flat = x.reshape(x.shape[0], -1)
    peaks = flat.max(axis=1)
    if np.any(peaks <= 0):
        bad = np.nonzero(peaks <= 0)[0]
        raise DegenerateInputError(
            f"cannot normalize frame(s) {bad.tolist()} with non-positive peak"
        )
    return x / peaks.reshape((-1,) + (1,) * (x.ndim - 1))


def log_compress(x, floor_db: float = -60.0):
    """Map normalized envelope to decibels: 20 log10(max(x, floor)).

    Exact zeros clamp to floor_db; a unit maximum maps to exactly 0 dB.
    """
    if floor_db >= 0:
        raise ParameterError(f"floor_db must be negative, got {floor_db}")
    x = np.asarray(x)
    floor_amp = 10.0 ** (floor_db / 20.0)
    return 20.0 * np.log10(np.maximum(x, floor_amp))


def clip_map_range(img, clip=(-60.0, 0.0), out_range=(0.0, 1.0)):
    """Clamp to ``clip`` then map that interval affinely onto ``out_range``."""
    lo, hi = float(clip[0]), float(clip[1])
    a, b = float(out_range[0]), float(out_range[1])
    if not lo < hi:
        raise ParameterError(f"clip range must be increasing, got {clip}")
    if not a < b:
        raise ParameterError(f"output range must be increasing, got {out_range}")
    clipped = np.clip(np.asarray(img), lo, hi)
    return (clipped - lo) / (hi - lo) * (b - a) + a


def _catmull_rom_weights(u):
    u2 = u * u
    u3 = u2 * u
    w0 = -0.5 * u3 + u2 - 0.5 * u
    w1 = 1.5 * u3 - 2.5 * u2 + 1.0
    w2 = -1.5 * u3 + 2.0 * u2 + 0.5 * u
    w3 = 0.5 * u3 - 0.5 * u2
    return (w0, w1, w2, w3)


def scan_convert(
    polar,
    rho_range,
    theta_range,
    order: int = 1,
    out_shape=None,
    fill: float = 0.0,
):
    """Resample a polar (..., rho, theta) image onto a Cartesian (..., z, x) grid.

    Each output pixel maps back through rho = hypot(x, z) and
    theta = atan2(x, z); the polar image is sampled there with nearest
    (order 0), bilinear (order 1) or Catmull-Rom bicubic (order 2)
    interpolation. Pixels outside the sector take ``fill``. The Cartesian
    grid spans the sector's bounding box; out_shape defaults to the polar
    image shape.
    """
    polar = np.asarray(polar)
    if polar.ndim < 2:
        raise ParameterError("polar image must have at least (rho, theta) axes")
    if order not in (0, 1, 2):
        raise ParameterError(f"interpolation order must be 0, 1 or 2, got {order}")
    r0, r1 = float(rho_range[0]), float(rho_range[1])
    t0, t1 = float(theta_range[0]), float(theta_range[1])
    if r0 < 0 or not r0 < r1:
        raise ParameterError(f"rho_range must be increasing and non-negative, got {rho_range}")
    half_pi = np.pi / 2
    if not (-half_pi < t0 < t1 < half_pi):
        raise ParameterError(
            f"theta_range must be increasing and within (-pi/2, pi/2), got {theta_range}"
        )

    n_rho, n_theta = polar.shape[-2], polar.shape[-1]
    if out_shape is None:
        out_shape = (n_rho, n_theta)
    n_zo, n_xo = int(out_shape[0]), int(out_shape[1])

    thetas = [t0, t1] + ([0.0] if t0 < 0.0 < t1 else [])
    corners_x = [r * np.sin(t) for r in (r0, r1) for t in thetas]
    corners_z = [r * np.cos(t) for r in (r0, r1) for t in thetas]
    x_axis = np.linspace(min(corners_x), max(corners_x), n_xo)
    z_axis = np.linspace(min(corners_z), max(corners_z), n_zo)
    zg, xg = np.meshgrid(z_axis, x_axis, indexing="ij")

    r = np.hypot(xg, zg)
    th = np.arctan2(xg, zg)
    eps_r = 1e-9 * max(r1 - r0, 1.0)
    eps_t = 1e-9 * (t1 - t0)
    in_sector = (r >= r0 - eps_r) & (r <= r1 + eps_r) & (th >= t0 - eps_t) & (th <= t1 + eps_t)

    ri = np.clip((r - r0) / (r1 - r0) * (n_rho - 1), 0.0, n_rho - 1)
    ti = np.clip((th - t0) / (t1 - t0) * (n_theta - 1), 0.0, n_theta - 1)

    if order == 0:
        ir = np.rint(ri).astype(np.intp)
        it = np.rint(ti).astype(np.intp)
        sampled = polar[..., ir, it]
    elif order == 1:
        i0 = np.clip(np.floor(ri).astype(np.intp), 0, max(n_rho - 2, 0))
        j0 = np.clip(np.floor(ti).astype(np.intp), 0, max(n_theta - 2, 0))
        u = ri - i0
        v = ti - j0
        i1 = np.minimum(i0 + 1, n_rho - 1)
        j1 = np.minimum(j0 + 1, n_theta - 1)
        sampled = (
            polar[..., i0, j0] * (1 - u) * (1 - v)
            + polar[..., i0, j1] * (1 - u) * v
            + polar[..., i1, j0] * u * (1 - v)
            + polar[..., i1, j1] * u * v
        )
    else:
        ib = np.floor(ri).astype(np.intp)
        jb = np.floor(ti).astype(np.intp)
        u = ri - ib
        v = ti - jb
        wr = _catmull_rom_weights(u)
        wt = _catmull_rom_weights(v)
        sampled = None
        for m in range(4):
            row = np.clip(ib + m - 1, 0, n_rho - 1)
            for nn in range(4):
                col = np.clip(jb + nn - 1, 0, n_theta - 1)
                term = polar[..., row, col] * (wr[m] * wt[nn])
                sampled = term if sampled is None else sampled + term

    return np.where(in_sector, sampled, fill)


# ---------------------------------------------------------------------------
# pipeline operation wrappers
# ---------------------------------------------------------------------------

def _as_frame(x, axes_by_rank: Mapping[int, tuple]) -> TensorFrame:
    if isinstance(x, TensorFrame):
        return x
    arr = np.asarray(x)
    if arr.ndim not in axes_by_rank:
        raise ParameterError(
            f"cannot infer axes for a rank-{arr.ndim} array; wrap it in a TensorFrame"
        )
    return TensorFrame(data=arr, axes=axes_by_rank[arr.ndim])


def pixel_coords(params: Mapping) -> tuple[np.ndarray, np.ndarray]:
    """Flattened pixel centers (z, x): explicit patch coords win over the grid."""
    if params.get("pixel_z") is not None and params.get("pixel_x") is not None:
        return (
            np.asarray(params["pixel_z"], dtype=np.float64).reshape(-1),
            np.asarray(params["pixel_x"], dtype=np.float64).reshape(-1),
        )
    if "grid_z" in params and "grid_x" in params:
        gz = np.asarray(params["grid_z"], dtype=np.float64).reshape(-1)
        gx = np.asarray(params["grid_x"], dtype=np.float64).reshape(-1)
        return np.repeat(gz, gx.size), np.tile(gx, gz.size)
    raise ParameterError("no pixel coordinates available (need grid_z/grid_x)")


def _has_coords(params: Mapping) -> bool:
    explicit = "pixel_z" in params and "pixel_x" in params
    from_grid = "grid_z" in params and "grid_x" in params
    return explicit or from_grid


RAW_AXES_BY_RANK = {4: ("frame", "tx", "el", "sample")}
ALIGNED_AXES_BY_RANK = {4: ("frame", "tx", "el", "pixel")}
POLAR_AXES_BY_RANK = {2: ("rho", "theta"), 3: ("frame", "rho", "theta")}


class Demodulate(Operation):
    """IQ demodulation of raw channel data."""

    name = "demodulate"
    required_params = frozenset({"sampling_frequency", "demodulation_frequency"})

    def __init__(self, decimation: int = 1):
        if int(decimation) < 1:
            raise ParameterError(f"decimation must be >= 1, got {decimation}")
        self.decimation = int(decimation)

    def apply(self, frame, params):
        frame = _as_frame(frame, RAW_AXES_BY_RANK)
        rf = np.asarray(frame.data)
        t0 = np.asarray(params.get("initial_times", 0.0), dtype=np.float64)
        if t0.ndim == 1 and "tx" in frame.axes:
            shape = [1] * rf.ndim
            shape[frame.axis("tx")] = t0.size
            t0 = t0.reshape(shape)
        out = demodulate(
            rf,
            fc=float(params["demodulation_frequency"]),
            fs=float(params["sampling_frequency"]),
            decimation=self.decimation,
            t0=t0,
        )
        return frame.with_data(out)

    def transform_params(self, params):
        if self.decimation == 1:
            return params
        fs = float(params["sampling_frequency"]) / self.decimation
        return ParameterBag(params).merged({"sampling_frequency": fs})


class TOFCorrection(Operation):
    """Time-of-flight correction onto the imaging grid."""

    name = "tof_correction"
    required_params = frozenset(
        {
            "sound_speed",
            "sampling_frequency",
            "demodulation_frequency",
            "initial_times",
            "element_positions",
        }
    )

    def missing_params(self, params):
        missing = set(self.required_params) - set(params.keys())
        if not _has_coords(params):
            missing.update({"grid_z", "grid_x"})
        if "steering_angles" not in params and "virtual_sources" not in params:
            missing.add("steering_angles")
        return sorted(missing)

    def apply(self, frame, params):
        frame = _as_frame(frame, RAW_AXES_BY_RANK)
        pz, px = pixel_coords(params)
        out = tof_correct(
            np.asarray(frame.data),
            pixel_x=px,
            pixel_z=pz,
            element_positions=params["element_positions"],
            sound_speed=float(params["sound_speed"]),
            sampling_frequency=float(params["sampling_frequency"]),
            demodulation_frequency=float(params["demodulation_frequency"]),
            initial_times=params.get("initial_times", 0.0),
            steering_angles=params.get("steering_angles"),
            virtual_sources=params.get("virtual_sources"),
            transmit_type=params.get("transmit_type", "plane_wave"),
        )
        return TensorFrame(data=out, axes=frame.axes[:-1] + ("pixel",))


class PfieldWeighting(Operation):
    """Weight aligned samples by the estimated transmit field and rx aperture."""

    name = "pfield_weighting"
    required_params = frozenset({"element_positions"})

    def missing_params(self, params):
        missing = set(self.required_params) - set(params.keys())
        if not _has_coords(params):
            missing.update({"grid_z", "grid_x"})
        return sorted(missing)

    def apply(self, frame, params):
        frame = _as_frame(frame, ALIGNED_AXES_BY_RANK)
        pz, px = pixel_coords(params)
        out = pfield_weight(
            np.asarray(frame.data),
            pixel_x=px,
            pixel_z=pz,
            element_positions=params["element_positions"],
            f_number=float(params.get("f_number", 1.0)),
            steering_angles=params.get("steering_angles"),
        )
        return frame.with_data(out)


class DelayAndSum(Operation):
    """Coherent weighted sum over transmits and elements."""

    name = "delay_and_sum"

    def apply(self, frame, params):
        frame = _as_frame(frame, ALIGNED_AXES_BY_RANK)
        out = delay_and_sum(np.asarray(frame.data), grid_shape=params.get("grid_shape"))
        axes = ("frame", "z", "x") if out.ndim == 3 else ("frame", "pixel")
        return TensorFrame(data=out, axes=axes)


class EnvelopeDetect(Operation):
    """Envelope detection (elementwise magnitude)."""

    name = "envelope_detect"

    def apply(self, frame, params):
        if not isinstance(frame, TensorFrame):
            return TensorFrame(data=envelope(frame), axes=("frame", "pixel"))
        return frame.with_data(envelope(frame.data))


class Normalize(Operation):
    """Per-frame peak normalization."""

    name = "normalize"

    def apply(self, frame, params):
        if not isinstance(frame, TensorFrame):
            raise ParameterError("normalize requires a TensorFrame input")
        x = np.asarray(frame.data)
        if frame.axes and frame.axes[0] in ("frame", "batch"):
            return frame.with_data(normalize(x))
        out = normalize(x[None])[0]
        return frame.with_data(out)


class LogCompress(Operation):
    """Convert normalized envelope to a dB-scale image."""

    name = "log_compress"

    def __init__(self, floor_db: float | None = None):
        self.floor_db = floor_db

    def apply(self, frame, params):
        floor = self.floor_db
        if floor is None:
            floor = float(params.get("dynamic_range", (-60.0, 0.0))[0])
        data = frame.data if isinstance(frame, TensorFrame) else frame
        out = log_compress(np.asarray(data), floor_db=floor)
        if isinstance(frame, TensorFrame):
            return frame.with_data(out)
        return TensorFrame(data=out, axes=("frame", "pixel"))


class ClipMapRange(Operation):
    """Clamp a dB image and map it onto an output range."""

    name = "clip_map_range"

    def __init__(self, clip=None, out_range=None):
        self.clip = clip
        self.out_range = out_range

    def apply(self, frame, params):
        clip = self.clip if self.clip is not None else params.get("clip_range", (-60.0, 0.0))
        out_range = (
            self.out_range
            if self.out_range is not None
            else params.get("normalization_range", (0.0, 1.0))
        )
        data = frame.data if isinstance(frame, TensorFrame) else frame
        out = clip_map_range(np.asarray(data), clip=clip, out_range=out_range)
        if isinstance(frame, TensorFrame):
            return frame.with_data(out)
        return np.asarray(out)


def bmode_pipeline(num_patches: int = 1, workers: int = 1, decimation: int = 1):
    """The standard raw-data to B-mode chain.

    Demodulation, then patched per-pixel beamforming (time-of-flight
    correction, pressure-field weighting, coherent sum), then envelope
    detection, per-frame normalization and log compression.
    """
    from sonolab.pipeline import PatchedGrid, Pipeline

    return Pipeline(
        [
            Demodulate(decimation=decimation),
            PatchedGrid(
                [TOFCorrection(), PfieldWeighting(), DelayAndSum()],
                num_patches=num_patches,
                workers=workers,
            ),
            EnvelopeDetect(),
            Normalize(),
            LogCompress(),
        ]
    )


class ScanConvert(Operation):
    """Polar to Cartesian display resampling."""

    name = "scan_convert"
    required_params = frozenset({"rho_range", "theta_range"})

    def __init__(self, order: int = 1, out_shape=None, fill: float = 0.0):
        if order not in (0, 1, 2):
            raise ParameterError(f"interpolation order must be 0, 1 or 2, got {order}")
        self.order = order
        self.out_shape = out_shape
        self.fill = fill

    def apply(self, frame, params):
        frame = _as_frame(frame, POLAR_AXES_BY_RANK)
        out = scan_convert(
            np.asarray(frame.data),
            rho_range=params["rho_range"],
            theta_range=params["theta_range"],
            order=self.order,
            out_shape=self.out_shape,
            fill=self.fill,
        )
        axes = frame.axes[:-2] + ("z", "x")
        return TensorFrame(data=out, axes=axes)
