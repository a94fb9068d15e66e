"""Command-line surface.

Subcommands: ``info`` (container summary), ``beamform`` (raw data to B-mode
PNG plus a parameter sidecar), ``simulate`` (phantom to container),
``agent`` (scan-line selection demo), ``dataset-stats`` (CSV stats).

Exit codes are stable: 0 success, 1 I/O, 2 format/schema, 3 parameter error.
Outputs are byte-reproducible: grayscale 8-bit PNGs without ancillary
metadata, deterministic simulation and selection. The SONOLAB_THREADS
environment variable caps worker threads used for patched beamforming
(thread count never changes output bytes).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from sonolab import container, sim
from sonolab.agent import apply_mask, default_n_actions, gem_select, make_line_mask, toy_particles
from sonolab.core import ParameterBag, Scan, TensorFrame, linear_probe
from sonolab.errors import ParameterError, SchemaError, SonolabError
from sonolab.ops import bmode_pipeline, clip_map_range
from sonolab.pipeline import DEFAULT_DYNAMIC_RANGE, pipeline_from_config

DEFAULT_NUM_PATCHES = 4


def thread_cap() -> int:
    """Worker-thread ceiling from SONOLAB_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("SONOLAB_THREADS", "1")))
    except ValueError:
        return 1


def save_png(path, img_db: np.ndarray, dynamic_range=DEFAULT_DYNAMIC_RANGE) -> None:
    """Write a dB image as 8-bit grayscale, dynamic range mapped to [0, 255]."""
    mapped = clip_map_range(np.asarray(img_db), clip=dynamic_range, out_range=(0.0, 255.0))
    Image.fromarray(np.rint(mapped).astype(np.uint8), mode="L").save(str(path), format="PNG")


def _json_ready(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, (tuple, list)):
        return [_json_ready(v) for v in value]
    return value


def write_sidecar(png_path, bag: ParameterBag) -> Path:
    sidecar = Path(str(png_path)).with_suffix(".params.json")
    payload = {k: _json_ready(v) for k, v in sorted(bag.items())}
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sidecar


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_info(args) -> int:
    print(container.summary(args.path))
    return 0


def cmd_beamform(args) -> int:
    data, scan, probe = container.load_file(args.input, data_type="raw_data")
    frame = int(args.frame)
    if not 0 <= frame < data.extent("frame"):
        raise ParameterError(f"frame {frame} out of range [0, {data.extent('frame')})")
    one = TensorFrame(data=np.asarray(data.data)[frame : frame + 1], axes=data.axes)

    if args.pipeline:
        pipe = pipeline_from_config(args.pipeline)
    else:
        pipe = bmode_pipeline(num_patches=args.num_patches, workers=thread_cap())

    overrides = {}
    if args.sound_speed is not None:
        overrides["sound_speed"] = float(args.sound_speed)
    if args.f_number is not None:
        overrides["f_number"] = float(args.f_number)
    if args.dynamic_range is not None:
        overrides["dynamic_range"] = (float(args.dynamic_range[0]), float(args.dynamic_range[1]))

    bag = pipe.prepare_parameters(probe, scan).merged(overrides)
    outputs = pipe.run({pipe.key: one}, bag)
    image = outputs[pipe.output_key]
    img2d = np.asarray(image.data)[0]

    dyn = bag["dynamic_range"]
    save_png(args.output, img2d, dynamic_range=dyn)
    sidecar = write_sidecar(args.output, bag)
    print(f"wrote {args.output} and {sidecar}")
    return 0


def _scan_from_args(args) -> tuple:
    angles = np.deg2rad(np.asarray(args.angles_deg, dtype=np.float64))
    probe = linear_probe(args.n_el, args.pitch)
    scan = Scan(
        sound_speed=args.sound_speed,
        center_frequency=args.center_frequency,
        sampling_frequency=args.sampling_frequency,
        n_tx=angles.size,
        transmit_type="plane_wave",
        steering_angles=angles,
        initial_times=0.0,
        xlims=(args.xlims[0], args.xlims[1]),
        zlims=(args.zlims[0], args.zlims[1]),
        grid_shape=(args.grid_shape[0], args.grid_shape[1]),
    )
    return probe, scan


def cmd_simulate(args) -> int:
    phantom, seed = sim.load_phantom(args.phantom)
    probe, scan = _scan_from_args(args)
    pulse = sim.Pulse(
        center_frequency=scan.center_frequency,
        fractional_bandwidth=args.fractional_bandwidth,
    )
    rf = sim.simulate_rf(phantom, probe, scan, pulse, n_samples=args.n_samples, seed=seed)
    rf32 = TensorFrame(data=np.asarray(rf.data, dtype=np.float32), axes=rf.axes)
    container.write_file(args.output, probe, scan, {"raw_data": rf32}, overwrite=args.force)
    print(f"wrote {args.output} ({phantom.n_scatterers} scatterers, {rf.shape[-1]} samples)")
    return 0


def cmd_agent(args) -> int:
    with container.UsFile(args.input, mode="r") as f:
        image = f.load_data(args.key, indices=[args.frame])
    img = np.asarray(image.data)[0]
    height, width = img.shape
    n_actions = args.n_actions if args.n_actions is not None else default_n_actions(width)

    # column spread of the image stands in for posterior uncertainty
    profile = img.std(axis=0) + 1e-6
    particles = toy_particles(img, n_particles=args.n_particles, noise_profile=profile, seed=args.seed)
    actions = gem_select(particles, n_actions=n_actions, n_possible_actions=width, width=width)
    mask = make_line_mask(actions, height, width)

    floor = DEFAULT_DYNAMIC_RANGE[0]
    masked = np.asarray(apply_mask(img, mask, fill=floor))

    prefix = Path(str(args.output))
    prefix.parent.mkdir(parents=True, exist_ok=True)
    full_png = Path(f"{prefix}_full.png")
    masked_png = Path(f"{prefix}_masked.png")
    lines_txt = Path(f"{prefix}_lines.txt")
    save_png(full_png, img)
    save_png(masked_png, masked)
    lines_txt.write_text(" ".join(str(i) for i in actions.selected_lines) + "\n", encoding="utf-8")
    print(" ".join(str(i) for i in actions.selected_lines))
    print(f"wrote {full_png}, {masked_png}, {lines_txt}")
    return 0


def cmd_dataset_stats(args) -> int:
    from sonolab.dataset import list_container_files

    files = list_container_files(args.root)
    if not files:
        print(f"error: no container files under {args.root}", file=sys.stderr)
        return 1
    key = container.data_key(args.key)
    rows = []
    total_sum = 0.0
    total_count = 0
    global_min = np.inf
    global_max = -np.inf
    for path in files:
        with container.UsFile(path, mode="r") as f:
            if key not in f.manifest:
                raise SchemaError(f"{path} has no dataset {key!r}")
            arr = np.asarray(f.load_data(key).data, dtype=np.float64)
        rows.append((str(path), arr.shape[0], arr.min(), arr.max(), arr.mean()))
        total_sum += arr.sum()
        total_count += arr.size
        global_min = min(global_min, float(arr.min()))
        global_max = max(global_max, float(arr.max()))
    print("file,frames,min,max,mean")
    for path, frames, mn, mx, mean in rows:
        print(f"{path},{frames},{mn:g},{mx:g},{mean:g}")
    print(
        f"# global: min={global_min:g} max={global_max:g} mean={total_sum / total_count:g}",
    )
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sonolab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("info", help="print a container summary")
    p.add_argument("path")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("beamform", help="reconstruct a B-mode PNG from raw channel data")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--sound-speed", type=float, default=None)
    p.add_argument("--f-number", type=float, default=None)
    p.add_argument("--dynamic-range", type=float, nargs=2, default=None, metavar=("LO", "HI"))
    p.add_argument("--pipeline", default=None, help="pipeline config file (JSON)")
    p.add_argument("--num-patches", type=int, default=DEFAULT_NUM_PATCHES)
    p.set_defaults(func=cmd_beamform)

    p = sub.add_parser("simulate", help="synthesize raw channel data for a phantom")
    p.add_argument("--phantom", required=True, help="phantom config file (JSON)")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--force", action="store_true", help="overwrite the output file")
    p.add_argument("--n-el", type=int, default=64)
    p.add_argument("--pitch", type=float, default=0.3e-3)
    p.add_argument("--center-frequency", type=float, default=5e6)
    p.add_argument("--sampling-frequency", type=float, default=20e6)
    p.add_argument("--sound-speed", type=float, default=1540.0)
    p.add_argument("--angles-deg", type=float, nargs="+", default=[-10.0, 0.0, 10.0])
    p.add_argument("--xlims", type=float, nargs=2, default=[-20e-3, 20e-3])
    p.add_argument("--zlims", type=float, nargs=2, default=[0.0, 60e-3])
    p.add_argument("--grid-shape", type=int, nargs=2, default=[400, 256])
    p.add_argument("--n-samples", type=int, default=None)
    p.add_argument("--fractional-bandwidth", type=float, default=0.6)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("agent", help="scan-line selection demo on a stored image")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="output file prefix")
    p.add_argument("--n-actions", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--key", default="data/image")
    p.add_argument("--n-particles", type=int, default=16)
    p.set_defaults(func=cmd_agent)

    p = sub.add_parser("dataset-stats", help="per-file frame counts and value stats, CSV")
    p.add_argument("root")
    p.add_argument("--key", required=True)
    p.set_defaults(func=cmd_dataset_stats)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, FileExistsError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SchemaError, KeyError) as exc:
        msg = exc.args[0] if exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2
    except (ParameterError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SonolabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
