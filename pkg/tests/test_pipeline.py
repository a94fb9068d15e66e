import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sonolab import (
    MissingParameterError,
    ParameterError,
    PatchedGrid,
    Pipeline,
    PipelineError,
    TensorFrame,
    pipeline_from_config,
)
from sonolab.core import make_cartesian_grid
from sonolab.errors import DegenerateInputError
from sonolab.ops import (
    ClipMapRange,
    DelayAndSum,
    Demodulate,
    EnvelopeDetect,
    LogCompress,
    Normalize,
    PfieldWeighting,
    TOFCorrection,
    bmode_pipeline,
)
from sonolab.pipeline import partition_pixels


def _random_image(seed=0, shape=(2, 12, 10)):
    rng = np.random.default_rng(seed)
    return TensorFrame(data=rng.uniform(0.01, 1.0, shape), axes=("frame", "z", "x"))


# ---------------------------------------------------------------------------
# structure and validation
# ---------------------------------------------------------------------------

def test_empty_pipeline_is_identity():
    pipe = Pipeline([])
    inputs = {"data": _random_image()}
    out = pipe.run(inputs, {})
    assert out == inputs


def test_default_key_chaining():
    pipe = Pipeline([EnvelopeDetect(), Normalize(), LogCompress()])
    assert pipe.key == "data"
    assert pipe.output_key == "data"


def test_broken_chaining_names_both_keys():
    class Producer(EnvelopeDetect):
        output_key = "img"

    with pytest.raises(PipelineError) as err:
        Pipeline([Producer(), Normalize()])
    assert "img" in str(err.value) and "data" in str(err.value)


def test_validate_names_missing_parameter():
    pipe = Pipeline([TOFCorrection()])
    with pytest.raises(MissingParameterError) as err:
        pipe.validate({"sampling_frequency": 20e6})
    msg = str(err.value)
    assert "tof_correction" in msg and "sound_speed" in msg


def test_validate_soundness(small_probe, small_scan, small_rf):
    pipe = bmode_pipeline(num_patches=2)
    bag = pipe.prepare_parameters(small_probe, small_scan)
    plan = pipe.validate(bag)
    assert plan.validated
    # if validation passed, run must not report a missing parameter
    pipe.run({pipe.key: small_rf}, bag)


def test_run_requires_input_key():
    pipe = Pipeline([EnvelopeDetect()])
    with pytest.raises(PipelineError):
        pipe.run({"wrong": _random_image()}, {})


def test_operation_errors_carry_op_name():
    pipe = Pipeline([Normalize()])
    zero = TensorFrame(data=np.zeros((1, 3, 3)), axes=("frame", "z", "x"))
    with pytest.raises(DegenerateInputError) as err:
        pipe.run({"data": zero}, {})
    assert "normalize" in str(err.value)


# ---------------------------------------------------------------------------
# prepared parameters
# ---------------------------------------------------------------------------

def test_prepare_parameters_contents(small_probe, small_scan):
    pipe = bmode_pipeline()
    bag = pipe.prepare_parameters(small_probe, small_scan)
    assert bag["sound_speed"] == 1540.0
    assert bag["f_number"] == 1.0
    assert tuple(bag["dynamic_range"]) == (-60.0, 0.0)
    grid = make_cartesian_grid(small_scan)
    assert np.array_equal(bag["grid_z"], np.asarray(grid.z))
    assert np.array_equal(bag["grid_x"], np.asarray(grid.x))
    assert bag["element_positions"].shape == (small_probe.n_el, 3)


def test_prepare_parameters_extras_only():
    pipe = Pipeline([])
    bag = pipe.prepare_parameters(theta_range=[-0.78, 0.78], rho_range=[0, 1])
    assert bag["theta_range"] == [-0.78, 0.78]


def test_call_time_override_shadows(small_probe, small_scan, small_rf):
    pipe = bmode_pipeline(num_patches=1)
    bag = pipe.prepare_parameters(small_probe, small_scan)
    base = np.asarray(pipe.run({pipe.key: small_rf}, bag)[pipe.output_key].data)
    slower = np.asarray(
        pipe.run({pipe.key: small_rf}, bag, sound_speed=1450.0)[pipe.output_key].data
    )
    assert not np.array_equal(base, slower)  # the override reached the kernels


def test_kwargs_call_interface(small_probe, small_scan, small_rf):
    pipe = bmode_pipeline(num_patches=1)
    params = pipe.prepare_parameters(small_probe, small_scan)
    out = pipe(data=small_rf, **params.as_dict())
    assert pipe.output_key in out
    assert out[pipe.output_key].axes == ("frame", "z", "x")


def test_display_only_scan_convert_pipeline():
    from sonolab.ops import ScanConvert

    pipe = Pipeline([ScanConvert(order=2)])
    params = pipe.prepare_parameters(theta_range=[-0.78, 0.78], rho_range=[0, 1])
    polar = np.random.default_rng(12).uniform(0, 1, (3, 32, 24))
    images = pipe(data=polar, **params.as_dict())["data"]
    assert images.axes == ("frame", "z", "x")
    assert images.shape == (3, 32, 24)


def test_axis_labels_survive_elementwise_ops():
    pipe = Pipeline([EnvelopeDetect(), Normalize(), LogCompress()])
    polar = TensorFrame(
        data=np.random.default_rng(13).uniform(0.1, 1.0, (2, 6, 5)),
        axes=("frame", "rho", "theta"),
    )
    out = pipe.run({"data": polar}, {})["data"]
    assert out.axes == ("frame", "rho", "theta")


# ---------------------------------------------------------------------------
# purity / statelessness / composition
# ---------------------------------------------------------------------------

def test_repeated_runs_bit_identical(small_probe, small_scan, small_rf):
    pipe = bmode_pipeline(num_patches=3)
    bag = pipe.prepare_parameters(small_probe, small_scan)
    a = np.asarray(pipe.run({pipe.key: small_rf}, bag)[pipe.output_key].data)
    b = np.asarray(pipe.run({pipe.key: small_rf}, bag)[pipe.output_key].data)
    assert np.array_equal(a, b)


def test_composition_associativity():
    p1 = Pipeline([EnvelopeDetect(), Normalize()])
    p2 = Pipeline([LogCompress()])
    whole = Pipeline([EnvelopeDetect(), Normalize(), LogCompress()])
    x = _random_image(3)
    composed = p2.run(p1.run({"data": x}, {}), {})["data"]
    direct = whole.run({"data": x}, {})["data"]
    assert np.array_equal(np.asarray(composed.data), np.asarray(direct.data))


def test_interleaved_pipelines_do_not_interact():
    p1 = Pipeline([EnvelopeDetect(), Normalize(), LogCompress()])
    p2 = Pipeline([ClipMapRange(clip=(-60, 0), out_range=(0, 1))])
    x1 = _random_image(10)
    x2 = TensorFrame(data=np.random.default_rng(11).uniform(-80, 0, (1, 6, 6)), axes=("frame", "z", "x"))
    alone1 = np.asarray(p1.run({"data": x1}, {})["data"].data)
    alone2 = np.asarray(p2.run({"data": x2}, {})["data"].data)
    inter1 = p1.run({"data": x1}, {})["data"]
    inter2 = p2.run({"data": x2}, {})["data"]
    inter1b = p1.run({"data": x1}, {})["data"]
    assert np.array_equal(alone1, np.asarray(inter1.data))
    assert np.array_equal(alone2, np.asarray(inter2.data))
    assert np.array_equal(alone1, np.asarray(inter1b.data))


# ---------------------------------------------------------------------------
# patched execution
# ---------------------------------------------------------------------------

def test_partition_sizes_example():
    sizes = [sl.stop - sl.start for sl in partition_pixels(10, 3)]
    assert sizes == [4, 3, 3]


@given(st.integers(min_value=1, max_value=500), st.integers(min_value=1, max_value=600))
def test_partition_properties(n, k):
    slices = partition_pixels(n, k)
    sizes = [sl.stop - sl.start for sl in slices]
    assert sum(sizes) == n
    assert len(sizes) == min(n, k)
    assert max(sizes) - min(sizes) <= 1
    assert slices[0].start == 0 and slices[-1].stop == n
    assert all(a.stop == b.start for a, b in zip(slices, slices[1:]))


def test_partition_rejects_zero():
    with pytest.raises(ParameterError):
        partition_pixels(10, 0)


def test_patched_equals_unpatched(small_probe, small_scan, small_rf):
    unpatched = Pipeline(
        [Demodulate(), TOFCorrection(), PfieldWeighting(), DelayAndSum(),
         EnvelopeDetect(), Normalize(), LogCompress()]
    )
    bag = unpatched.prepare_parameters(small_probe, small_scan)
    ref = np.asarray(unpatched.run({unpatched.key: small_rf}, bag)[unpatched.output_key].data)
    for k in (1, 2, 7, 100):
        pipe = bmode_pipeline(num_patches=k)
        img = np.asarray(pipe.run({pipe.key: small_rf}, bag)[pipe.output_key].data)
        rel = np.abs(img - ref).max() / np.abs(ref).max()
        assert rel <= 1e-5, f"num_patches={k}: rel={rel}"


def test_patch_count_clamped_to_pixels(small_probe, small_scan, small_rf):
    n_pixels = small_scan.grid_shape[0] * small_scan.grid_shape[1]
    pipe = bmode_pipeline(num_patches=n_pixels * 10)
    bag = pipe.prepare_parameters(small_probe, small_scan)
    img = pipe.run({pipe.key: small_rf}, bag)[pipe.output_key]
    assert img.shape == (1,) + small_scan.grid_shape


def test_worker_threads_do_not_change_bits(small_probe, small_scan, small_rf):
    serial = bmode_pipeline(num_patches=8, workers=1)
    threaded = bmode_pipeline(num_patches=8, workers=4)
    bag = serial.prepare_parameters(small_probe, small_scan)
    a = np.asarray(serial.run({serial.key: small_rf}, bag)[serial.output_key].data)
    b = np.asarray(threaded.run({threaded.key: small_rf}, bag)[threaded.output_key].data)
    assert np.array_equal(a, b)


def test_patched_grid_validates_inner_requirements():
    pipe = Pipeline([PatchedGrid([TOFCorrection()], num_patches=2)])
    with pytest.raises(MissingParameterError) as err:
        pipe.validate({})
    assert "grid_z" in str(err.value)


# ---------------------------------------------------------------------------
# declarative configs
# ---------------------------------------------------------------------------

def test_pipeline_from_config_roundtrip(tmp_path, small_probe, small_scan, small_rf):
    config = {
        "operations": [
            {"name": "demodulate"},
            {
                "name": "patched_grid",
                "num_patches": 5,
                "operations": [
                    {"name": "tof_correction"},
                    {"name": "pfield_weighting"},
                    {"name": "delay_and_sum"},
                ],
            },
            {"name": "envelope_detect"},
            {"name": "normalize"},
            {"name": "log_compress"},
        ]
    }
    path = tmp_path / "pipeline.json"
    path.write_text(json.dumps(config))
    pipe = pipeline_from_config(str(path))
    bag = pipe.prepare_parameters(small_probe, small_scan)
    img = pipe.run({pipe.key: small_rf}, bag)[pipe.output_key]
    assert img.axes == ("frame", "z", "x")

    reference = bmode_pipeline(num_patches=5)
    ref = reference.run({reference.key: small_rf}, bag)[reference.output_key]
    assert np.array_equal(np.asarray(img.data), np.asarray(ref.data))


def test_pipeline_from_config_rejects_unknown_op():
    with pytest.raises(ParameterError) as err:
        pipeline_from_config({"operations": [{"name": "sharpen"}]})
    msg = str(err.value)
    assert "sharpen" in msg and "delay_and_sum" in msg  # lists known ops


def test_pipeline_from_config_rejects_bad_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("operations: demodulate")
    with pytest.raises(ParameterError):
        pipeline_from_config(str(path))


def test_pipeline_from_config_rejects_missing_operations():
    with pytest.raises(ParameterError):
        pipeline_from_config({"ops": []})
