"""Stateless, composable execution engine.

Operations declare their keys and required parameters; a Pipeline validates
the chain, resolves parameters once into an ExecutionPlan, and runs the plan.
PatchedGrid chunks the flattened pixel grid so that per-pixel beamforming
stages run within a bounded memory footprint.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from sonolab.core import (
    Grid,
    ParameterBag,
    Probe,
    Scan,
    TensorFrame,
    make_cartesian_grid,
    merge_parameters,
)
from sonolab.errors import MissingParameterError, ParameterError, PipelineError

DEFAULT_KEY = "data"
DEFAULT_F_NUMBER = 1.0
DEFAULT_DYNAMIC_RANGE = (-60.0, 0.0)


class Operation:
    """Base class for pure pipeline operations.

    Subclasses set ``name`` and ``required_params`` and implement
    :meth:`apply`. The output must depend only on the input tensor and the
    resolved parameters; re-running with identical inputs yields identical
    outputs (this purity is what makes the whole pipeline stateless).
    """

    name: str = "operation"
    input_key: str = DEFAULT_KEY
    output_key: str = DEFAULT_KEY
    required_params: frozenset = frozenset()
    pure: bool = True
    #: keep this op's output in the run() result even if a later op overwrites
    #: its key chain position
    retain_output: bool = False

    def apply(self, frame: TensorFrame, params: Mapping) -> TensorFrame:
        raise NotImplementedError

    def missing_params(self, params: Mapping) -> list[str]:
        """Names of required parameters not bound in ``params``."""
        return sorted(set(self.required_params) - set(params.keys()))

    def transform_params(self, params: ParameterBag) -> ParameterBag:
        """Parameter bag as seen by downstream operations (pure, plan time)."""
        return params

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


@dataclass(frozen=True)
class ExecutionPlan:
    """Parameters resolved per operation, computed once and reusable."""

    operations: tuple[Operation, ...]
    op_params: tuple[ParameterBag, ...]
    validated: bool = True


class Pipeline:
    """Ordered chain of operations with a single entry and exit key.

    The pipeline holds no mutable state between calls; plans and pipelines
    may be shared freely across threads.
    """

    def __init__(self, operations: Sequence[Operation], key: str | None = None):
        self.operations = tuple(operations)
        self._entry_key = key
        self._check_chaining()

    @property
    def key(self) -> str:
        if self._entry_key is not None:
            return self._entry_key
        return self.operations[0].input_key if self.operations else DEFAULT_KEY

    @property
    def output_key(self) -> str:
        return self.operations[-1].output_key if self.operations else self.key

    def _check_chaining(self):
        prev_out = self.key
        for op in self.operations:
            if op.input_key != prev_out:
                raise PipelineError(
                    f"operation '{op.name}' consumes key '{op.input_key}' but the "
                    f"previous stage produces '{prev_out}'"
                )
            prev_out = op.output_key

    def prepare_parameters(
        self, probe: Probe | None = None, scan: Scan | None = None, **extra
    ) -> ParameterBag:
        """Derive every quantity the operations need from probe and scan.

        Extra keyword arguments are merged on top (call-time style), so
        ``prepare_parameters(theta_range=..., rho_range=...)`` also works for
        display-only pipelines without acquisition context.
        """
        entries: dict = {}
        if probe is not None:
            entries["element_positions"] = np.asarray(probe.element_positions)
            entries["pitch"] = probe.pitch
        if scan is not None:
            entries["sound_speed"] = scan.sound_speed
            entries["center_frequency"] = scan.center_frequency
            entries["sampling_frequency"] = scan.sampling_frequency
            entries["demodulation_frequency"] = scan.demodulation_frequency
            entries["initial_times"] = np.asarray(scan.initial_times)
            entries["n_tx"] = scan.n_tx
            entries["transmit_type"] = scan.transmit_type
            if scan.steering_angles is not None:
                entries["steering_angles"] = np.asarray(scan.steering_angles)
            if scan.virtual_sources is not None:
                entries["virtual_sources"] = np.asarray(scan.virtual_sources)
            grid = make_cartesian_grid(scan)
            entries["grid_z"] = np.asarray(grid.z)
            entries["grid_x"] = np.asarray(grid.x)
            entries["grid_shape"] = scan.grid_shape
            entries["xlims"] = scan.xlims
            entries["zlims"] = scan.zlims
        entries.setdefault("f_number", DEFAULT_F_NUMBER)
        entries.setdefault("dynamic_range", DEFAULT_DYNAMIC_RANGE)
        return merge_parameters(entries, extra)

    def validate(self, params: Mapping | None = None) -> ExecutionPlan:
        """Resolve parameters per operation; fail if anything is unbound."""
        bag = ParameterBag(params or {})
        self._check_chaining()
        resolved = []
        for op in self.operations:
            missing = op.missing_params(bag)
            if missing:
                raise MissingParameterError(op.name, missing)
            resolved.append(bag)
            bag = op.transform_params(bag)
        return ExecutionPlan(operations=self.operations, op_params=tuple(resolved))

    def run(
        self,
        inputs: Mapping[str, TensorFrame],
        params: Mapping | None = None,
        **overrides,
    ) -> dict[str, TensorFrame]:
        """Execute the chain on ``inputs``; returns a map holding output_key.

        Call-time ``overrides`` shadow values in ``params``. Intermediate keys
        produced by non-final operations are dropped unless the producing
        operation sets ``retain_output``.
        """
        bag = merge_parameters(params, overrides)
        plan = self.validate(bag)
        state: dict[str, TensorFrame] = dict(inputs)
        produced: list[tuple[Operation, str]] = []
        for op, op_bag in zip(plan.operations, plan.op_params):
            if op.input_key not in state:
                raise PipelineError(
                    f"operation '{op.name}' expects input key '{op.input_key}' "
                    f"which is not present (have: {sorted(state)})"
                )
            try:
                result = op.apply(state[op.input_key], op_bag)
            except Exception as exc:
                try:
                    wrapped = type(exc)(f"[{op.name}] {exc}")
                except Exception:  # exception type with a custom signature
                    raise exc
                raise wrapped from exc
            state[op.output_key] = result
            produced.append((op, op.output_key))
        keep = set(inputs) | {self.output_key}
        keep.update(key for op, key in produced if op.retain_output)
        return {k: v for k, v in state.items() if k in keep}

    def __call__(self, **kwargs) -> dict[str, TensorFrame]:
        """Keyword-style invocation: tensors and parameters in one kwargs blob.

        The entry key (and any key an operation consumes) selects the tensor
        inputs; everything else is treated as a parameter override.
        """
        tensor_keys = {self.key} | {op.input_key for op in self.operations}
        inputs = {k: v for k, v in kwargs.items() if k in tensor_keys}
        params = {k: v for k, v in kwargs.items() if k not in tensor_keys}
        return self.run(inputs, params)

    def __repr__(self) -> str:
        names = ", ".join(op.name for op in self.operations)
        return f"Pipeline([{names}])"


def partition_pixels(n_pixels: int, num_patches: int) -> list[slice]:
    """Contiguous ceil-divided chunks of the flattened pixel index.

    num_patches is clamped to n_pixels; the first (n mod k) chunks are one
    pixel longer, e.g. 10 pixels in 3 patches gives sizes (4, 3, 3).
    """
    if num_patches < 1:
        raise ParameterError(f"num_patches must be >= 1, got {num_patches}")
    k = min(num_patches, n_pixels)
    base, rem = divmod(n_pixels, k)
    slices = []
    start = 0
    for i in range(k):
        size = base + (1 if i < rem else 0)
        slices.append(slice(start, start + size))
        start += size
    return slices


def _patch_overlay(params: Mapping, pz: np.ndarray, px: np.ndarray) -> ParameterBag:
    entries = {k: v for k, v in dict(params).items() if k not in ("grid_shape",)}
    entries["pixel_z"] = pz
    entries["pixel_x"] = px
    return ParameterBag(entries)


def run_patched(
    inner_ops: Sequence[Operation],
    num_patches: int,
    inputs: TensorFrame,
    params: Mapping,
    workers: int = 1,
) -> TensorFrame:
    """Run a per-pixel chain over the grid in contiguous pixel chunks.

    The flattened pixel grid is split into ``num_patches`` chunks, the inner
    chain runs once per chunk, and results are concatenated along the pixel
    axis and reshaped back to (..., z, x). Chunks are independent, so worker
    threads change nothing observable: results are placed by chunk index.
    """
    bag = ParameterBag(params)
    if "grid_z" not in bag or "grid_x" not in bag:
        raise MissingParameterError("patched_grid", ["grid_z", "grid_x"])
    grid = Grid(z=np.asarray(bag["grid_z"]), x=np.asarray(bag["grid_x"]))
    pz, px = grid.pixel_coords()
    n_pixels = pz.size
    chunks = partition_pixels(n_pixels, num_patches)

    def run_chunk(sl: slice) -> TensorFrame:
        overlay = _patch_overlay(bag, pz[sl], px[sl])
        frame = inputs
        for op in inner_ops:
            frame = op.apply(frame, overlay)
            overlay = op.transform_params(overlay)
        return frame

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_chunk, chunks))
    else:
        results = [run_chunk(sl) for sl in chunks]

    pixel_axis = results[0].axis("pixel")
    data = np.concatenate([np.asarray(r.data) for r in results], axis=pixel_axis)
    out = TensorFrame(data=data, axes=results[0].axes)
    n_z, n_x = grid.shape
    if out.shape[pixel_axis] == n_z * n_x and pixel_axis == out.data.ndim - 1:
        reshaped = np.asarray(out.data).reshape(out.shape[:-1] + (n_z, n_x))
        out = TensorFrame(data=reshaped, axes=out.axes[:-1] + ("z", "x"))
    return out


class PatchedGrid(Operation):
    """Memory-efficient wrapper: run per-pixel operations patch by patch."""

    name = "patched_grid"

    def __init__(self, operations: Sequence[Operation], num_patches: int = 1, workers: int = 1):
        if num_patches < 1:
            raise ParameterError(f"num_patches must be >= 1, got {num_patches}")
        self.operations = tuple(operations)
        self.num_patches = int(num_patches)
        self.workers = max(1, int(workers))
        if self.operations:
            self.input_key = self.operations[0].input_key
            self.output_key = self.operations[-1].output_key

    def missing_params(self, params: Mapping) -> list[str]:
        missing = set()
        if "grid_z" not in params:
            missing.add("grid_z")
        if "grid_x" not in params:
            missing.add("grid_x")
        # inner operations will see patch pixel coordinates at run time
        inner_view = dict(params)
        inner_view.setdefault("pixel_z", None)
        inner_view.setdefault("pixel_x", None)
        for op in self.operations:
            missing.update(op.missing_params(inner_view))
        return sorted(missing)

    def apply(self, frame: TensorFrame, params: Mapping) -> TensorFrame:
        return run_patched(self.operations, self.num_patches, frame, params, self.workers)

    def __repr__(self) -> str:
        inner = ", ".join(op.name for op in self.operations)
        return f"PatchedGrid([{inner}], num_patches={self.num_patches})"


def known_operations() -> dict[str, type]:
    """Name -> class map for every operation usable in a pipeline config."""
    from sonolab import ops

    table: dict[str, type] = {
        "demodulate": ops.Demodulate,
        "tof_correction": ops.TOFCorrection,
        "pfield_weighting": ops.PfieldWeighting,
        "delay_and_sum": ops.DelayAndSum,
        "envelope_detect": ops.EnvelopeDetect,
        "normalize": ops.Normalize,
        "log_compress": ops.LogCompress,
        "clip_map_range": ops.ClipMapRange,
        "scan_convert": ops.ScanConvert,
        "patched_grid": PatchedGrid,
    }
    return table


def _build_op(entry: Mapping, table: Mapping[str, type]) -> Operation:
    if not isinstance(entry, Mapping) or "name" not in entry:
        raise ParameterError(f"each pipeline config entry needs a 'name', got {entry!r}")
    name = entry["name"]
    if name not in table:
        raise ParameterError(
            f"unknown operation {name!r}; known operations: {', '.join(sorted(table))}"
        )
    kwargs = {k: v for k, v in entry.items() if k != "name"}
    if name == "patched_grid":
        inner = [_build_op(e, table) for e in kwargs.pop("operations", [])]
        return PatchedGrid(inner, **kwargs)
    return table[name](**kwargs)


def pipeline_from_config(config) -> Pipeline:
    """Build a pipeline from a declarative config (path, JSON text, or dict).

    Schema: ``{"operations": [{"name": ..., <static params>}, ...]}``; see
    docs/pipeline-config.md. Unknown operation names are rejected with the
    list of known ones.
    """
    if isinstance(config, (str, bytes)):
        text = str(config)
        if not text.lstrip().startswith("{"):
            with open(text, "r", encoding="utf-8") as fh:
                text = fh.read()
        try:
            config = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"pipeline config is not valid JSON: {exc}") from exc
    if not isinstance(config, Mapping) or "operations" not in config:
        raise ParameterError("pipeline config must be a mapping with an 'operations' list")
    table = known_operations()
    operations = [_build_op(entry, table) for entry in config["operations"]]
    return Pipeline(operations)
