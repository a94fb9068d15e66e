import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sonolab.agent import (
    ActionSet,
    apply_mask,
    default_n_actions,
    gem_select,
    line_scores,
    make_line_mask,
    pixel_entropy,
    toy_particles,
)
from sonolab.errors import ParameterError


def ensemble_with_column_stds(stds, height=4):
    """Two-particle ensemble with exact per-column variance stds**2 (ddof=1)."""
    stds = np.asarray(stds, dtype=np.float64)
    d = stds / math.sqrt(2.0)
    ens = np.empty((2, height, stds.size))
    ens[0] = -d
    ens[1] = d
    return ens


# ---------------------------------------------------------------------------
# entropy map
# ---------------------------------------------------------------------------

def test_entropy_floor_for_identical_particles():
    ens = np.ones((5, 3, 4))
    eps = 1e-8
    h = pixel_entropy(ens, eps=eps)
    assert np.allclose(h, 0.5 * math.log(2 * math.pi * math.e * eps))


def test_entropy_of_unit_variance():
    ens = ensemble_with_column_stds(np.ones(6))
    h = pixel_entropy(ens, eps=1e-15)
    assert np.allclose(h, 0.5 * math.log(2 * math.pi * math.e), atol=1e-6)
    assert h[0, 0] == pytest.approx(1.4189, abs=1e-3)


def test_entropy_doubling_adds_ln2():
    # H = 0.5 ln(2 pi e sigma^2), so quadrupling the variance adds ln 2
    ens = ensemble_with_column_stds(np.full(4, 2.0))
    h1 = pixel_entropy(ens, eps=1e-15)
    h2 = pixel_entropy(2.0 * ens, eps=1e-15)
    assert np.allclose(h2 - h1, math.log(2.0), atol=1e-9)


def test_entropy_batched_shape():
    ens = np.random.default_rng(0).standard_normal((2, 8, 5, 6))
    h = pixel_entropy(ens)
    assert h.shape == (2, 5, 6)


def test_entropy_needs_two_particles():
    with pytest.raises(ParameterError):
        pixel_entropy(np.zeros((1, 4, 4)))
    with pytest.raises(ParameterError):
        pixel_entropy(np.zeros((3, 4, 4)), eps=0.0)


# ---------------------------------------------------------------------------
# greedy selection
# ---------------------------------------------------------------------------

def test_select_engineered_columns():
    width = 32
    hot = [2, 5, 11, 13, 17, 23, 29, 30]
    stds = np.full(width, 1e-3)
    stds[hot] = 1.0
    ens = ensemble_with_column_stds(stds)
    actions = gem_select(ens, n_actions=8, n_possible_actions=width, width=width)
    assert list(actions.selected_lines) == hot


def test_select_all_lines_is_exhaustive():
    width = 16
    ens = np.random.default_rng(1).standard_normal((6, 3, width))
    actions = gem_select(ens, n_actions=width, n_possible_actions=width, width=width)
    assert list(actions.selected_lines) == list(range(width))


def test_default_action_count_follows_width():
    assert default_n_actions(256) == 32
    ens = np.random.default_rng(2).standard_normal((4, 2, 256))
    actions = gem_select(ens, n_actions=default_n_actions(256), n_possible_actions=256, width=256)
    assert actions.n_actions == 32
    assert len(actions.selected_lines) == 32


def test_ties_break_toward_lower_index():
    ens = ensemble_with_column_stds(np.ones(8))  # all columns identical
    actions = gem_select(ens, n_actions=3, n_possible_actions=8, width=8)
    assert list(actions.selected_lines) == [0, 1, 2]


def test_selection_validation():
    ens = ensemble_with_column_stds(np.ones(8))
    with pytest.raises(ParameterError):
        gem_select(ens, n_actions=9, n_possible_actions=8, width=8)
    with pytest.raises(ParameterError):
        gem_select(ens, n_actions=2, n_possible_actions=3, width=8)  # not divisible
    with pytest.raises(ParameterError):
        gem_select(ens, n_actions=0, n_possible_actions=8, width=8)


def test_grouped_lines_score_column_groups():
    # 8 columns in 4 candidate lines of width 2; line 1 has the hot columns
    stds = np.array([0.01, 0.01, 3.0, 3.0, 0.01, 0.01, 0.01, 0.01])
    ens = ensemble_with_column_stds(stds)
    actions = gem_select(ens, n_actions=1, n_possible_actions=4, width=8)
    assert list(actions.selected_lines) == [1]
    mask = make_line_mask(actions, height=2, width=8)
    assert np.array_equal(mask[0], [False, False, True, True, False, False, False, False])


@settings(deadline=None, max_examples=40)
@given(
    st.integers(min_value=4, max_value=12),
    st.integers(min_value=1, max_value=4),
    st.randoms(use_true_random=False),
)
def test_greedy_equals_brute_force(n_lines, n_actions, rnd):
    n_actions = min(n_actions, n_lines)
    stds = np.array([0.1 + 2.0 * rnd.random() for _ in range(n_lines)])
    ens = ensemble_with_column_stds(stds)
    actions = gem_select(ens, n_actions=n_actions, n_possible_actions=n_lines, width=n_lines)

    scores = line_scores(ens, n_possible_actions=n_lines, width=n_lines)
    best = None
    for subset in itertools.combinations(range(n_lines), n_actions):
        total = scores[list(subset)].sum()
        if best is None or total > best[0] + 1e-12:
            best = (total, subset)
    assert tuple(actions.selected_lines) == best[1]


def test_selection_invariant_under_monotone_variance_transform():
    rng = np.random.default_rng(3)
    stds = rng.uniform(0.5, 3.0, 16)
    base = gem_select(ensemble_with_column_stds(stds), 4, 16, 16)
    squared = gem_select(ensemble_with_column_stds(stds**2), 4, 16, 16)  # var -> var^2
    scaled = gem_select(ensemble_with_column_stds(2.0 * stds), 4, 16, 16)  # var -> 4 var
    assert base.selected_lines == squared.selected_lines == scaled.selected_lines


def test_selection_permutation_equivariant():
    rng = np.random.default_rng(4)
    stds = rng.uniform(0.1, 5.0, 12)
    perm = rng.permutation(12)
    ens = ensemble_with_column_stds(stds)
    sel = set(gem_select(ens, 5, 12, 12).selected_lines)
    sel_perm = set(gem_select(ens[:, :, perm], 5, 12, 12).selected_lines)
    expected = {int(np.nonzero(perm == j)[0][0]) for j in sel}
    assert sel_perm == expected


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

def test_line_mask_single_column():
    actions = ActionSet(selected_lines=(0,), n_actions=1, n_possible_actions=3)
    mask = make_line_mask(actions, height=2, width=3)
    assert np.array_equal(mask, [[True, False, False], [True, False, False]])


def test_line_mask_all_lines():
    actions = ActionSet(selected_lines=(0, 1, 2), n_actions=3, n_possible_actions=3)
    assert np.all(make_line_mask(actions, height=4, width=3))


def test_line_mask_true_count():
    actions = ActionSet(selected_lines=(1, 3), n_actions=2, n_possible_actions=4)
    mask = make_line_mask(actions, height=5, width=8)  # line width 2
    assert mask.sum() == 2 * 2 * 5


def test_action_set_validation():
    with pytest.raises(ParameterError):
        ActionSet(selected_lines=(2, 1), n_actions=2, n_possible_actions=4)
    with pytest.raises(ParameterError):
        ActionSet(selected_lines=(0, 9), n_actions=2, n_possible_actions=4)
    with pytest.raises(ParameterError):
        ActionSet(selected_lines=(), n_actions=0, n_possible_actions=4)


def test_apply_mask_identity_and_fill():
    data = np.arange(12.0).reshape(3, 4)
    all_true = np.ones((3, 4), dtype=bool)
    assert np.array_equal(apply_mask(data, all_true, fill=-60.0), data)
    all_false = np.zeros((3, 4), dtype=bool)
    assert np.all(apply_mask(data, all_false, fill=-60.0) == -60.0)


@given(st.integers(min_value=0, max_value=2**16 - 1))
def test_apply_mask_idempotent(bits):
    mask = np.array([(bits >> i) & 1 for i in range(16)], dtype=bool).reshape(4, 4)
    data = np.arange(16.0).reshape(4, 4)
    once = apply_mask(data, mask, fill=-60.0)
    twice = apply_mask(once, mask, fill=-60.0)
    assert np.array_equal(once, twice)


def test_apply_mask_shape_mismatch():
    with pytest.raises(ParameterError):
        apply_mask(np.zeros((3, 4)), np.zeros((2, 5), dtype=bool), fill=0.0)


# ---------------------------------------------------------------------------
# toy particle ensembles
# ---------------------------------------------------------------------------

def test_toy_particles_zero_profile():
    ref = np.random.default_rng(5).standard_normal((6, 8))
    ens = toy_particles(ref, n_particles=4, noise_profile=np.zeros(8))
    assert np.all(np.asarray(ens.data) == ref[None])


def test_toy_particles_column_variance_converges():
    ref = np.zeros((3, 8))
    profile = np.zeros(8)
    profile[5] = 1.0
    ens = toy_particles(ref, n_particles=10000, noise_profile=profile, seed=12)
    var = np.asarray(ens.data).var(axis=0, ddof=1)
    assert np.all(np.abs(var[:, 5] - 1.0) < 0.05)  # within 5%
    assert np.all(var[:, :5] == 0.0)


def test_toy_particles_deterministic():
    ref = np.random.default_rng(6).standard_normal((4, 4))
    a = toy_particles(ref, 8, np.ones(4), seed=3)
    b = toy_particles(ref, 8, np.ones(4), seed=3)
    assert np.array_equal(np.asarray(a.data), np.asarray(b.data))
