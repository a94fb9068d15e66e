"""Domain types shared by every module: transducer and acquisition descriptions,
imaging grids, labeled tensors, and the parameter bag that flows through pipelines.

All quantities are SI base units (meters, seconds, Hz). Every type here is
immutable after construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator, Mapping, Sequence

import numpy as np

from sonolab.errors import ParameterError

TRANSMIT_TYPES = ("plane_wave", "diverging", "focused")

# Canonical axis vocabulary. Raw channel data is (frame, tx, el, sample);
# beamformed images are (frame, z, x) or (frame, rho, theta); "pixel" is the
# flattened image grid used by the per-pixel kernels; "batch"/"h"/"w" appear on
# particle ensembles and dataloader output.
AXIS_LABELS = frozenset(
    {
        "frame",
        "batch",
        "tx",
        "el",
        "sample",
        "pixel",
        "z",
        "x",
        "rho",
        "theta",
        "particle",
        "channel",
        "h",
        "w",
    }
)

RAW_DATA_AXES = ("frame", "tx", "el", "sample")
IMAGE_AXES = ("frame", "z", "x")
POLAR_IMAGE_AXES = ("frame", "rho", "theta")


def _readonly(arr: np.ndarray) -> np.ndarray:
    """Return a non-writeable view so frozen dataclasses stay actually frozen."""
    view = arr.view()
    view.flags.writeable = False
    return view


@dataclass(frozen=True)
class Probe:
    """Transducer geometry.

    element_positions is an (n_el, 3) array of element centers in meters.
    For a linear array (constant y and z) the x positions must be strictly
    increasing and span (n_el - 1) * pitch.
    """

    element_positions: np.ndarray
    pitch: float
    name: str = "probe"

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.element_positions, dtype=np.float64))
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ParameterError(
                f"element_positions must be (n_el, 3), got shape {pos.shape}"
            )
        if not np.all(np.isfinite(pos)):
            raise ParameterError("element positions must be finite")
        if self.pitch <= 0:
            raise ParameterError(f"pitch must be positive, got {self.pitch}")
        if pos.shape[0] > 1 and np.ptp(pos[:, 1]) == 0 and np.ptp(pos[:, 2]) == 0:
            x = pos[:, 0]
            if not np.all(np.diff(x) > 0):
                raise ParameterError("linear array x positions must be strictly increasing")
            aperture = x[-1] - x[0]
            expected = (pos.shape[0] - 1) * self.pitch
            if abs(aperture - expected) > 1e-9:
                raise ParameterError(
                    f"aperture {aperture:.9g} m inconsistent with "
                    f"(n_el - 1) * pitch = {expected:.9g} m"
                )
        object.__setattr__(self, "element_positions", _readonly(pos))

    @property
    def n_el(self) -> int:
        return self.element_positions.shape[0]

    @property
    def aperture(self) -> float:
        x = self.element_positions[:, 0]
        return float(x.max() - x.min())


def linear_probe(n_el: int, pitch: float, name: str = "linear") -> Probe:
    """Centered linear array in the x axis at y = z = 0."""
    x = (np.arange(n_el) - (n_el - 1) / 2.0) * pitch
    pos = np.zeros((n_el, 3))
    pos[:, 0] = x
    return Probe(element_positions=pos, pitch=pitch, name=name)


@dataclass(frozen=True)
class Scan:
    """Acquisition parameters for one dataset.

    Exactly one of steering_angles (plane_wave) or virtual_sources
    (focused / diverging) must be populated, matching transmit_type.
    demodulation_frequency defaults to center_frequency.
    """

    sound_speed: float
    center_frequency: float
    sampling_frequency: float
    n_tx: int
    xlims: tuple[float, float]
    zlims: tuple[float, float]
    grid_shape: tuple[int, int]
    transmit_type: str = "plane_wave"
    demodulation_frequency: float | None = None
    steering_angles: np.ndarray | None = None
    virtual_sources: np.ndarray | None = None
    initial_times: np.ndarray | float = 0.0

    def __post_init__(self):
        if self.sound_speed <= 0:
            raise ParameterError(f"sound_speed must be positive, got {self.sound_speed}")
        if self.sampling_frequency <= 0:
            raise ParameterError("sampling_frequency must be positive")
        if self.center_frequency <= 0:
            raise ParameterError("center_frequency must be positive")
        if self.n_tx < 1:
            raise ParameterError("n_tx must be >= 1")
        if self.transmit_type not in TRANSMIT_TYPES:
            raise ParameterError(
                f"transmit_type must be one of {TRANSMIT_TYPES}, got {self.transmit_type!r}"
            )
        xlims = (float(self.xlims[0]), float(self.xlims[1]))
        zlims = (float(self.zlims[0]), float(self.zlims[1]))
        if not xlims[0] < xlims[1]:
            raise ParameterError(f"xlims must be increasing, got {xlims}")
        if not zlims[0] < zlims[1]:
            raise ParameterError(f"zlims must be increasing, got {zlims}")
        grid_shape = (int(self.grid_shape[0]), int(self.grid_shape[1]))
        if grid_shape[0] < 2 or grid_shape[1] < 2:
            raise ParameterError(f"grid_shape components must be >= 2, got {grid_shape}")

        if self.demodulation_frequency is None:
            object.__setattr__(self, "demodulation_frequency", float(self.center_frequency))

        plane = self.transmit_type == "plane_wave"
        if plane:
            if self.steering_angles is None or self.virtual_sources is not None:
                raise ParameterError("plane_wave scans populate steering_angles only")
            angles = np.asarray(self.steering_angles, dtype=np.float64).reshape(-1)
            if angles.shape[0] != self.n_tx:
                raise ParameterError(
                    f"steering_angles has length {angles.shape[0]}, expected n_tx={self.n_tx}"
                )
            object.__setattr__(self, "steering_angles", _readonly(angles))
        else:
            if self.virtual_sources is None or self.steering_angles is not None:
                raise ParameterError(
                    f"{self.transmit_type} scans populate virtual_sources only"
                )
            vs = np.asarray(self.virtual_sources, dtype=np.float64)
            if vs.shape != (self.n_tx, 3):
                raise ParameterError(
                    f"virtual_sources must be (n_tx, 3), got shape {vs.shape}"
                )
            object.__setattr__(self, "virtual_sources", _readonly(vs))

        t0 = np.asarray(self.initial_times, dtype=np.float64)
        if t0.ndim == 0:
            t0 = np.full(self.n_tx, float(t0))
        if t0.shape != (self.n_tx,):
            raise ParameterError(
                f"initial_times has shape {t0.shape}, expected ({self.n_tx},)"
            )
        object.__setattr__(self, "initial_times", _readonly(t0))
        object.__setattr__(self, "xlims", xlims)
        object.__setattr__(self, "zlims", zlims)
        object.__setattr__(self, "grid_shape", grid_shape)

    def with_overrides(self, **kwargs) -> "Scan":
        """New Scan with the given fields replaced (invariants re-checked)."""
        return replace(self, **kwargs)


@dataclass(frozen=True)
class TensorFrame:
    """Dense numeric array with named axes.

    The data array is exposed through a read-only view; operations never
    mutate their inputs.
    """

    data: np.ndarray
    axes: tuple[str, ...]

    def __post_init__(self):
        arr = np.asarray(self.data)
        axes = tuple(self.axes)
        if len(axes) != arr.ndim:
            raise ParameterError(
                f"got {len(axes)} axis labels for a rank-{arr.ndim} array"
            )
        unknown = [a for a in axes if a not in AXIS_LABELS]
        if unknown:
            raise ParameterError(f"unknown axis label(s) {unknown}; allowed: {sorted(AXIS_LABELS)}")
        if arr.ndim and min(arr.shape) < 1:
            raise ParameterError(f"all axis extents must be >= 1, got shape {arr.shape}")
        object.__setattr__(self, "data", _readonly(arr))
        object.__setattr__(self, "axes", axes)

    def __array__(self, dtype=None):
        return np.asarray(self.data, dtype=dtype)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def axis(self, label: str) -> int:
        try:
            return self.axes.index(label)
        except ValueError:
            raise ParameterError(f"tensor has no {label!r} axis (axes: {self.axes})") from None

    def extent(self, label: str) -> int:
        return self.data.shape[self.axis(label)]

    def with_data(self, data: np.ndarray, axes: Sequence[str] | None = None) -> "TensorFrame":
        return TensorFrame(data=data, axes=tuple(axes) if axes is not None else self.axes)


class ParameterBag(Mapping):
    """Flat map of named scalars/arrays flowing through a pipeline.

    Immutable; merging is left-biased toward call-time overrides, see
    :func:`merge_parameters`.
    """

    def __init__(self, entries: Mapping | None = None, **kwargs):
        merged: dict = {}
        if entries is not None:
            merged.update(entries)
        merged.update(kwargs)
        self._entries = merged

    def __getitem__(self, key: str):
        return self._entries[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self) -> str:
        return f"ParameterBag({sorted(self._entries)})"

    def merged(self, overrides: "Mapping | ParameterBag | None") -> "ParameterBag":
        return merge_parameters(self, overrides)

    def as_dict(self) -> dict:
        return dict(self._entries)


def merge_parameters(prepared, overrides) -> ParameterBag:
    """Union of both bags; on duplicate keys the override value wins."""
    out = dict(prepared) if prepared is not None else {}
    if overrides is not None:
        out.update(dict(overrides))
    return ParameterBag(out)


@dataclass(frozen=True)
class Grid:
    """Pixel-center coordinates, Cartesian (z, x) or polar (rho, theta)."""

    z: np.ndarray | None = None
    x: np.ndarray | None = None
    rho: np.ndarray | None = None
    theta: np.ndarray | None = None

    def __post_init__(self):
        cartesian = self.z is not None and self.x is not None
        polar = self.rho is not None and self.theta is not None
        if cartesian == polar:
            raise ParameterError("grid must be either Cartesian (z, x) or polar (rho, theta)")
        for name in ("z", "x", "rho", "theta"):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.asarray(v, dtype=np.float64).reshape(-1)
            if v.size >= 2 and not np.all(np.diff(v) > 0):
                raise ParameterError(f"grid {name} coordinates must be strictly increasing")
            object.__setattr__(self, name, _readonly(v))

    @property
    def shape(self) -> tuple[int, int]:
        if self.z is not None:
            return (self.z.size, self.x.size)
        return (self.rho.size, self.theta.size)

    def pixel_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened (row-major) pixel centers as (axis0, axis1) vectors."""
        a, b = (self.z, self.x) if self.z is not None else (self.rho, self.theta)
        return np.repeat(a, b.size), np.tile(b, a.size)


def cartesian_grid(xlims, zlims, grid_shape) -> Grid:
    """Uniformly spaced pixel centers spanning exactly [xlims] x [zlims]."""
    if not xlims[0] < xlims[1] or not zlims[0] < zlims[1]:
        raise ParameterError(f"degenerate grid limits xlims={xlims}, zlims={zlims}")
    n_z, n_x = int(grid_shape[0]), int(grid_shape[1])
    if n_z < 2 or n_x < 2:
        raise ParameterError(f"grid_shape components must be >= 2, got {grid_shape}")
    return Grid(
        z=np.linspace(zlims[0], zlims[1], n_z),
        x=np.linspace(xlims[0], xlims[1], n_x),
    )


def make_cartesian_grid(scan: Scan) -> Grid:
    """Imaging grid for a scan: n_z x n_x pixel centers, endpoints inclusive."""
    return cartesian_grid(scan.xlims, scan.zlims, scan.grid_shape)
