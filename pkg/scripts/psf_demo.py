#!/usr/bin/env python3
"""Wire-target resolution study: simulate, beamform, report localization error.

Usage: python scripts/psf_demo.py [output.png]
"""

import sys
import time

import numpy as np

from sonolab import Scan, linear_probe, make_cartesian_grid
from sonolab.cli import save_png
from sonolab.ops import bmode_pipeline
from sonolab.sim import Phantom, Pulse, simulate_rf

TARGETS_MM = [(-8.0, 20.0), (8.0, 20.0), (0.0, 30.0), (-6.0, 40.0), (6.0, 40.0)]


def main() -> int:
    out = sys.argv[1] if len(sys.argv) > 1 else "psf_demo.png"

    probe = linear_probe(64, 0.3e-3)
    scan = Scan(
        sound_speed=1540.0,
        center_frequency=5e6,
        sampling_frequency=20e6,
        n_tx=3,
        steering_angles=np.deg2rad([-10.0, 0.0, 10.0]),
        initial_times=0.0,
        xlims=(-20e-3, 20e-3),
        zlims=(0.0, 60e-3),
        grid_shape=(400, 256),
    )
    positions = np.array([[x * 1e-3, 0.0, z * 1e-3] for x, z in TARGETS_MM])
    phantom = Phantom(positions=positions, amplitudes=np.ones(len(TARGETS_MM)))

    t0 = time.monotonic()
    rf = simulate_rf(phantom, probe, scan, Pulse(5e6, 0.6))
    t1 = time.monotonic()
    pipe = bmode_pipeline(num_patches=8)
    bag = pipe.prepare_parameters(probe, scan)
    img = np.asarray(pipe.run({pipe.key: rf}, bag)[pipe.output_key].data)[0]
    t2 = time.monotonic()
    print(f"simulated {rf.shape} in {t1 - t0:.2f} s, beamformed in {t2 - t1:.2f} s")

    grid = make_cartesian_grid(scan)
    for x_mm, z_mm in TARGETS_MM:
        zw = np.nonzero(np.abs(grid.z - z_mm * 1e-3) <= 2e-3)[0]
        xw = np.nonzero(np.abs(grid.x - x_mm * 1e-3) <= 2e-3)[0]
        window = img[np.ix_(zw, xw)]
        iz, ix = np.unravel_index(np.argmax(window), window.shape)
        err_z = (grid.z[zw[iz]] - z_mm * 1e-3) * 1e3
        err_x = (grid.x[xw[ix]] - x_mm * 1e-3) * 1e3
        print(f"target ({x_mm:+.1f}, {z_mm:.1f}) mm -> error ({err_x:+.3f}, {err_z:+.3f}) mm")

    save_png(out, img, dynamic_range=(-60.0, 0.0))
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
