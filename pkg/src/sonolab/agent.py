"""Scan-line selection closing the action-perception loop.

Given an ensemble of plausible images (stand-ins for posterior samples), score
per-pixel uncertainty with a Gaussian entropy proxy, pick the scan lines whose
total score is largest, and turn the picks into a measurement mask. Line
scores are additive and fixed, so the greedy selection reduces to top-k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sonolab.core import TensorFrame
from sonolab.errors import ParameterError

ENTROPY_VARIANCE_FLOOR = 1e-8


def default_n_actions(width: int) -> int:
    return width // 8


def _ensemble_array(ens) -> np.ndarray:
    arr = np.asarray(ens)
    if arr.ndim == 4 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 3:
        raise ParameterError(
            f"expected a (particle, height, width) ensemble, got shape {arr.shape}"
        )
    if arr.shape[0] < 2:
        raise ParameterError("need at least 2 particles to estimate spread")
    return arr


def pixel_entropy(ens, eps: float = ENTROPY_VARIANCE_FLOOR):
    """Gaussian differential-entropy proxy per pixel.

    H = 0.5 ln(2 pi e (var + eps)) where var is the unbiased particle
    variance; eps floors the estimate for degenerate (identical) ensembles.
    Accepts (particle, h, w) or (batch, particle, h, w); the particle axis is
    reduced away.
    """
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    arr = np.asarray(ens, dtype=np.float64)
    if arr.ndim not in (3, 4):
        raise ParameterError(f"expected rank 3 or 4 ensemble, got shape {arr.shape}")
    axis = arr.ndim - 3
    if arr.shape[axis] < 2:
        raise ParameterError("need at least 2 particles to estimate spread")
    var = arr.var(axis=axis, ddof=1)
    return 0.5 * np.log(2.0 * np.pi * np.e * (var + eps))


@dataclass(frozen=True)
class ActionSet:
    """Selected candidate scan lines, strictly increasing indices."""

    selected_lines: tuple[int, ...]
    n_actions: int
    n_possible_actions: int

    def __post_init__(self):
        lines = tuple(int(i) for i in self.selected_lines)
        if len(lines) != self.n_actions:
            raise ParameterError(
                f"{len(lines)} lines selected but n_actions={self.n_actions}"
            )
        if self.n_actions < 1 or self.n_actions > self.n_possible_actions:
            raise ParameterError(
                f"n_actions must be in [1, {self.n_possible_actions}], got {self.n_actions}"
            )
        if any(b <= a for a, b in zip(lines, lines[1:])):
            raise ParameterError(f"selected lines must be strictly increasing, got {lines}")
        if lines and (lines[0] < 0 or lines[-1] >= self.n_possible_actions):
            raise ParameterError(f"line indices out of range: {lines}")
        object.__setattr__(self, "selected_lines", lines)


def line_scores(ens, n_possible_actions: int, width: int, eps: float = ENTROPY_VARIANCE_FLOOR):
    """Summed pixel entropy per candidate line (contiguous column group)."""
    if width % n_possible_actions != 0:
        raise ParameterError(
            f"width {width} is not divisible into {n_possible_actions} candidate lines"
        )
    arr = _ensemble_array(ens)
    if arr.shape[-1] != width:
        raise ParameterError(f"ensemble width {arr.shape[-1]} != declared width {width}")
    entropy = pixel_entropy(arr, eps=eps)
    line_width = width // n_possible_actions
    return entropy.reshape(entropy.shape[0], n_possible_actions, line_width).sum(axis=(0, 2))


def gem_select(
    ens,
    n_actions: int,
    n_possible_actions: int,
    width: int,
    eps: float = ENTROPY_VARIANCE_FLOOR,
) -> ActionSet:
    """Greedily pick the n_actions highest-entropy scan lines.

    Scores do not interact across lines, so greedy selection equals taking
    the top-k line scores; ties break toward the lower index.
    """
    if n_actions < 1 or n_actions > n_possible_actions:
        raise ParameterError(
            f"n_actions must be in [1, {n_possible_actions}], got {n_actions}"
        )
    scores = line_scores(ens, n_possible_actions, width, eps=eps)
    order = np.argsort(-scores, kind="stable")  # stable: ties keep lower index first
    chosen = np.sort(order[:n_actions])
    return ActionSet(
        selected_lines=tuple(int(i) for i in chosen),
        n_actions=n_actions,
        n_possible_actions=n_possible_actions,
    )


def make_line_mask(actions: ActionSet, height: int, width: int) -> np.ndarray:
    """Boolean (height, width) mask, true on the selected lines' columns."""
    if width % actions.n_possible_actions != 0:
        raise ParameterError(
            f"width {width} not divisible into {actions.n_possible_actions} lines"
        )
    line_width = width // actions.n_possible_actions
    mask = np.zeros((height, width), dtype=bool)
    for j in actions.selected_lines:
        mask[:, j * line_width : (j + 1) * line_width] = True
    return mask


def apply_mask(data, mask: np.ndarray, fill: float):
    """Keep data where the mask is true, substitute ``fill`` elsewhere."""
    arr = data.data if isinstance(data, TensorFrame) else np.asarray(data)
    mask = np.asarray(mask, dtype=bool)
    try:
        out = np.where(mask, arr, fill)
    except ValueError as exc:
        raise ParameterError(
            f"mask shape {mask.shape} does not broadcast against data shape {arr.shape}"
        ) from exc
    if isinstance(data, TensorFrame):
        return data.with_data(out)
    return out


def toy_particles(reference, n_particles: int, noise_profile, seed: int = 0) -> TensorFrame:
    """Synthetic ensemble: reference plus column-scaled seeded Gaussian noise.

    Stand-in for posterior samples when no generative model is around; the
    empirical per-column variance converges to noise_profile**2.
    """
    ref = np.asarray(reference, dtype=np.float64)
    if ref.ndim != 2:
        raise ParameterError(f"reference image must be 2-D, got shape {ref.shape}")
    profile = np.asarray(noise_profile, dtype=np.float64).reshape(-1)
    if profile.shape[0] != ref.shape[1]:
        raise ParameterError(
            f"noise_profile length {profile.shape[0]} != image width {ref.shape[1]}"
        )
    if n_particles < 2:
        raise ParameterError("need at least 2 particles")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n_particles,) + ref.shape) * profile[None, None, :]
    return TensorFrame(data=ref[None] + noise, axes=("particle", "z", "x"))
