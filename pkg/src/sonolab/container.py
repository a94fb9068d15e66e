"""On-disk container: channel data / images and acquisition parameters in one file.

Layout (HDF5): group ``data`` holds the payload datasets (``raw_data`` 4-D,
``image`` and ``image_sc`` 3-D, stored float32 little-endian), group ``scan``
holds acquisition parameters (float64), group ``probe`` holds
``element_positions`` (n_el, 3) plus pitch and name. Group and dataset names
are part of the contract. ``data/image`` holds log-compressed dB images.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import h5py
import numpy as np

from sonolab.core import Probe, Scan, TensorFrame
from sonolab.errors import ParameterError, SchemaError

DATA_GROUP = "data"
SCAN_GROUP = "scan"
PROBE_GROUP = "probe"

_AXES_BY_RANK = {
    4: ("frame", "tx", "el", "sample"),
    3: ("frame", "z", "x"),
}

_SCAN_SCALARS = (
    "sound_speed",
    "center_frequency",
    "sampling_frequency",
    "demodulation_frequency",
)


def data_key(key: str) -> str:
    """Canonical dataset path: 'raw_data' and 'data/raw_data' are the same key."""
    return key if key.startswith(f"{DATA_GROUP}/") else f"{DATA_GROUP}/{key}"


def _reject_remote(path) -> Path:
    text = str(path)
    if "://" in text:
        raise ParameterError(
            f"remote URIs are not supported ({text!r}); download the file and pass a local path"
        )
    return Path(text)


def _as_tensor(value, key: str) -> TensorFrame:
    if isinstance(value, TensorFrame):
        return value
    arr = np.asarray(value)
    if arr.ndim not in _AXES_BY_RANK:
        raise SchemaError(
            f"dataset {key!r}: cannot infer axes for rank-{arr.ndim} array; pass a TensorFrame"
        )
    return TensorFrame(data=arr, axes=_AXES_BY_RANK[arr.ndim])


class UsFile:
    """One container file; readable ("r") or writable ("w") at open time.

    Multiple concurrent readers are safe; writing requires exclusive access
    and is refused if the file exists unless overwrite is requested.
    """

    def __init__(self, path, mode: str = "r", overwrite: bool = False):
        self.path = _reject_remote(path)
        if mode not in ("r", "w"):
            raise ParameterError(f"mode must be 'r' or 'w', got {mode!r}")
        self.mode = mode
        if mode == "r":
            if not self.path.exists():
                raise FileNotFoundError(f"no such file: {self.path}")
            try:
                self._h5 = h5py.File(self.path, "r")
            except OSError as exc:
                raise SchemaError(f"{self.path} is not a readable container: {exc}") from exc
            self._validate_layout()
        else:
            if self.path.exists() and not overwrite:
                raise FileExistsError(
                    f"{self.path} exists; pass overwrite=True to replace it"
                )
            self._h5 = h5py.File(self.path, "w")

    # -- lifecycle ---------------------------------------------------------

    def close(self):
        if self._h5 is not None:
            self._h5.close()
            self._h5 = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    # -- layout ------------------------------------------------------------

    def _validate_layout(self):
        for group in (SCAN_GROUP, PROBE_GROUP):
            if group not in self._h5:
                raise SchemaError(f"{self.path} is missing required group '{group}'")
        if DATA_GROUP not in self._h5 or not self.manifest:
            raise SchemaError(f"{self.path} holds no '{DATA_GROUP}/*' datasets")
        counts = {key: self._h5[key].shape[0] for key in self.manifest}
        if len(set(counts.values())) > 1:
            raise SchemaError(f"inconsistent frame counts across datasets: {counts}")

    @property
    def manifest(self) -> tuple[str, ...]:
        if DATA_GROUP not in self._h5:
            return ()
        return tuple(
            f"{DATA_GROUP}/{name}" for name in sorted(self._h5[DATA_GROUP].keys())
        )

    @property
    def n_frames(self) -> int:
        return int(self._h5[self.manifest[0]].shape[0])

    # -- reading -----------------------------------------------------------

    def _require_read(self):
        if self.mode != "r":
            raise ParameterError("file is open for writing; reopen in mode 'r'")

    def load_data(self, key: str, indices: Sequence[int] | None = None) -> TensorFrame:
        """Load one dataset, optionally restricted to the given frame indices."""
        self._require_read()
        full = data_key(key)
        if full not in self._h5:
            raise KeyError(
                f"no dataset {full!r} in {self.path.name}; available: {list(self.manifest)}"
            )
        ds = self._h5[full]
        raw_axes = ds.attrs.get("axes", _AXES_BY_RANK.get(ds.ndim, ()))
        axes = tuple(
            a.decode() if isinstance(a, (bytes, np.bytes_)) else str(a) for a in raw_axes
        )
        if indices is None:
            return TensorFrame(data=ds[()], axes=axes)
        n = ds.shape[0]
        idx = [int(i) for i in indices]
        bad = [i for i in idx if not 0 <= i < n]
        if bad:
            raise IndexError(f"frame indices {bad} out of range [0, {n})")
        data = np.stack([ds[i] for i in idx], axis=0)
        return TensorFrame(data=data, axes=axes)

    def scan(self) -> Scan:
        self._require_read()
        g = self._h5[SCAN_GROUP]

        def maybe(name):
            return g[name][()] if name in g else None

        transmit_type = g["transmit_type"][()]
        if isinstance(transmit_type, bytes):
            transmit_type = transmit_type.decode()
        return Scan(
            sound_speed=float(g["sound_speed"][()]),
            center_frequency=float(g["center_frequency"][()]),
            sampling_frequency=float(g["sampling_frequency"][()]),
            demodulation_frequency=float(g["demodulation_frequency"][()]),
            n_tx=int(g["n_tx"][()]),
            transmit_type=str(transmit_type),
            steering_angles=maybe("steering_angles"),
            virtual_sources=maybe("virtual_sources"),
            initial_times=g["initial_times"][()],
            xlims=tuple(g["xlims"][()]),
            zlims=tuple(g["zlims"][()]),
            grid_shape=tuple(int(v) for v in g["grid_shape"][()]),
        )

    def probe(self) -> Probe:
        self._require_read()
        g = self._h5[PROBE_GROUP]
        name = g["name"][()]
        if isinstance(name, bytes):
            name = name.decode()
        return Probe(
            element_positions=g["element_positions"][()],
            pitch=float(g["pitch"][()]),
            name=str(name),
        )

    def summary(self) -> str:
        """Human-readable manifest: every dataset plus scan/probe parameters.

        A pure function of file content (the path is deliberately omitted),
        lines ordered lexicographically by key.
        """
        self._require_read()
        lines: dict[str, str] = {}
        for key in self.manifest:
            ds = self._h5[key]
            lines[key] = f"shape={tuple(ds.shape)}, dtype={ds.dtype}"
        lines["frames"] = str(self.n_frames)
        for group in (PROBE_GROUP, SCAN_GROUP):
            for name, ds in self._h5[group].items():
                value = ds[()]
                if isinstance(value, bytes):
                    text = value.decode()
                elif np.ndim(value) == 0:
                    v = value.item() if hasattr(value, "item") else value
                    text = f"{v:g}" if isinstance(v, float) else str(v)
                else:
                    arr = np.asarray(value)
                    if arr.size <= 8:
                        text = "[" + ", ".join(f"{v:g}" for v in arr.reshape(-1)) + "]"
                    else:
                        text = f"shape={arr.shape}, dtype={arr.dtype}"
                lines[f"{group}/{name}"] = text
        return "\n".join(f"{key}: {lines[key]}" for key in sorted(lines))

    # -- writing -----------------------------------------------------------

    def _require_write(self):
        if self.mode != "w":
            raise ParameterError("file is open read-only; reopen in mode 'w'")

    def write(self, probe: Probe, scan: Scan, datasets: Mapping[str, TensorFrame]):
        self._require_write()
        if not datasets:
            raise SchemaError("refusing to write a container with no datasets")

        tensors = {data_key(k): _as_tensor(v, k) for k, v in datasets.items()}
        frame_counts = set()
        for key, tf in tensors.items():
            if "frame" not in tf.axes:
                raise SchemaError(f"dataset {key!r} has no frame axis (axes: {tf.axes})")
            frame_counts.add(tf.extent("frame"))
            if "el" in tf.axes and tf.extent("el") != probe.n_el:
                raise SchemaError(
                    f"dataset {key!r} has {tf.extent('el')} elements, probe has {probe.n_el}"
                )
            if "tx" in tf.axes and tf.extent("tx") != scan.n_tx:
                raise SchemaError(
                    f"dataset {key!r} has {tf.extent('tx')} transmits, scan has {scan.n_tx}"
                )
        if len(frame_counts) > 1:
            raise SchemaError(f"inconsistent frame counts across datasets: {sorted(frame_counts)}")

        for key, tf in tensors.items():
            ds = self._h5.create_dataset(key, data=np.asarray(tf.data, dtype="<f4"))
            ds.attrs["axes"] = [a.encode() for a in tf.axes]

        sg = self._h5.create_group(SCAN_GROUP)
        for name in _SCAN_SCALARS:
            sg.create_dataset(name, data=np.float64(getattr(scan, name)))
        sg.create_dataset("n_tx", data=np.int64(scan.n_tx))
        sg.create_dataset("transmit_type", data=scan.transmit_type)
        if scan.steering_angles is not None:
            sg.create_dataset("steering_angles", data=np.asarray(scan.steering_angles, dtype="<f8"))
        if scan.virtual_sources is not None:
            sg.create_dataset("virtual_sources", data=np.asarray(scan.virtual_sources, dtype="<f8"))
        sg.create_dataset("initial_times", data=np.asarray(scan.initial_times, dtype="<f8"))
        sg.create_dataset("xlims", data=np.asarray(scan.xlims, dtype="<f8"))
        sg.create_dataset("zlims", data=np.asarray(scan.zlims, dtype="<f8"))
        sg.create_dataset("grid_shape", data=np.asarray(scan.grid_shape, dtype="<i8"))

        pg = self._h5.create_group(PROBE_GROUP)
        pg.create_dataset("element_positions", data=np.asarray(probe.element_positions, dtype="<f8"))
        pg.create_dataset("pitch", data=np.float64(probe.pitch))
        pg.create_dataset("name", data=probe.name)
        self._h5.flush()


def write_file(
    path,
    probe: Probe,
    scan: Scan,
    datasets: Mapping[str, TensorFrame],
    overwrite: bool = False,
) -> Path:
    """Create a container on disk; returns the path written."""
    path = _reject_remote(path)
    with UsFile(path, mode="w", overwrite=overwrite) as f:
        f.write(probe, scan, datasets)
    return path


def load_file(path, data_type: str = "raw_data", scan_overrides: Mapping | None = None):
    """Load one dataset plus scan and probe; overrides replace scan fields.

    Returns (TensorFrame, Scan, Probe). Typical overrides are imaging limits,
    e.g. ``{"xlims": (-20e-3, 20e-3), "zlims": (0e-3, 80e-3)}``.
    """
    with UsFile(path, mode="r") as f:
        data = f.load_data(data_type)
        scan = f.scan()
        probe = f.probe()
    if scan_overrides:
        scan = scan.with_overrides(**dict(scan_overrides))
    return data, scan, probe


def summary(path) -> str:
    """Container summary without keeping the file open."""
    with UsFile(path, mode="r") as f:
        return f.summary()
