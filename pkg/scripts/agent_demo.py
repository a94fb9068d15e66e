#!/usr/bin/env python3
"""Action-perception loop on synthetic data.

Perception: simulate a phantom and reconstruct a B-mode image. Action: build
a toy particle ensemble around the reconstruction, score per-pixel
uncertainty, pick the best scan lines, and render the subsampled measurement
the next acquisition would produce.

Usage: python scripts/agent_demo.py [output_prefix]
"""

import sys

import numpy as np

from sonolab import Scan, linear_probe
from sonolab.agent import apply_mask, default_n_actions, gem_select, make_line_mask, toy_particles
from sonolab.cli import save_png
from sonolab.ops import bmode_pipeline
from sonolab.sim import Phantom, Pulse, simulate_rf


def main() -> int:
    prefix = sys.argv[1] if len(sys.argv) > 1 else "agent_demo"

    probe = linear_probe(64, 0.3e-3)
    scan = Scan(
        sound_speed=1540.0,
        center_frequency=5e6,
        sampling_frequency=20e6,
        n_tx=3,
        steering_angles=np.deg2rad([-10.0, 0.0, 10.0]),
        initial_times=0.0,
        xlims=(-16e-3, 16e-3),
        zlims=(2e-3, 50e-3),
        grid_shape=(256, 128),
    )
    rng = np.random.default_rng(0)
    positions = np.column_stack(
        [rng.uniform(-12e-3, 12e-3, 6), np.zeros(6), rng.uniform(10e-3, 45e-3, 6)]
    )
    phantom = Phantom(positions=positions, amplitudes=rng.uniform(0.5, 1.0, 6))

    # perception: reconstruct what the probe saw
    rf = simulate_rf(phantom, probe, scan, Pulse(5e6, 0.6))
    pipe = bmode_pipeline(num_patches=8)
    bag = pipe.prepare_parameters(probe, scan)
    img = np.asarray(pipe.run({pipe.key: rf}, bag)[pipe.output_key].data)[0]

    # action: where is the reconstruction least certain?
    height, width = img.shape
    profile = img.std(axis=0) + 1e-6
    particles = toy_particles(img, n_particles=32, noise_profile=profile, seed=1)
    n_actions = default_n_actions(width)
    actions = gem_select(particles, n_actions=n_actions, n_possible_actions=width, width=width)
    mask = make_line_mask(actions, height, width)
    measurement = np.asarray(apply_mask(img, mask, fill=-60.0))

    save_png(f"{prefix}_full.png", img)
    save_png(f"{prefix}_measurement.png", measurement)
    print(f"selected {n_actions} of {width} lines: {list(actions.selected_lines)}")
    print(f"wrote {prefix}_full.png and {prefix}_measurement.png")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
