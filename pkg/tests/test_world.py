import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdpss.world import (
    PLACEMENT_CLEARANCE,
    ArenaConfig,
    Controller,
    PlacementFailure,
    density,
    derive_seed,
    local_count,
    make_rng,
    sample_episode,
)

from conftest import make_world

ARENA = ArenaConfig(3.0, 3.0)


def test_density_values():
    assert round(density(21, ARENA), 2) == 2.33
    assert density(21, ARENA) == pytest.approx(21 / 9, abs=1e-15)
    assert round(density(11, ARENA), 2) == 1.22
    assert density(0, ArenaConfig(5.0, 7.0)) == 0


@given(st.integers(0, 200), st.floats(0.5, 20), st.floats(0.5, 20))
def test_density_times_area_recovers_count(n, w, h):
    arena = ArenaConfig(w, h)
    assert density(n, arena) * arena.area == pytest.approx(n, rel=1e-15, abs=0)


def test_local_count_examples():
    assert local_count(make_world(ego_pos=(0.5, 0.5)), 1.0) == 0
    w = make_world(ego_pos=(0.0, 0.0), ped_pos=[(0.5, 0.0), (2.0, 0.0)])
    assert local_count(w, 1.0) == 1
    # closed ball: a pedestrian exactly at r counts
    w = make_world(ego_pos=(0.0, 0.0), ped_pos=[(1.0, 0.0)])
    assert local_count(w, 1.0) == 1


@given(st.integers(0, 2**32), st.floats(0.1, 3.0), st.floats(0.1, 3.0))
@settings(max_examples=50, deadline=None)
def test_local_count_monotone_in_radius(seed, r1, r2):
    w = sample_episode(ARENA, (0, 20), seed)
    lo, hi = sorted((r1, r2))
    assert local_count(w, lo) <= local_count(w, hi)


def test_sample_episode_range_and_determinism():
    counts = set()
    for seed in range(200):
        w = sample_episode(ARENA, (11, 16), seed)
        assert 11 <= w.n_peds <= 16
        counts.add(w.n_peds)
    assert counts == set(range(11, 17))
    a = sample_episode(ARENA, (11, 16), 42)
    b = sample_episode(ARENA, (11, 16), 42)
    assert a == b
    for name in ("ego_pos", "ego_goal", "ped_pos", "ped_goal"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    assert sample_episode(ARENA, (11, 16), 43) != a


def test_sample_episode_dense_case_fits():
    for seed in range(20):
        w = sample_episode(ARENA, (21, 21), seed)
        assert w.n_peds == 21


def test_placement_failure_when_overfull():
    with pytest.raises(PlacementFailure):
        sample_episode(ArenaConfig(1.0, 1.0), (30, 30), 0)


@given(st.integers(0, 2**63), st.integers(0, 25), st.sampled_from(list(Controller)))
@settings(max_examples=60, deadline=None)
def test_initial_non_overlap_and_goal_distance(seed, n, controller):
    w = sample_episode(ARENA, (n, n), seed, controller)
    pos, radii = w.all_positions(), w.all_radii()
    for i in range(len(pos)):
        for j in range(i + 1, len(pos)):
            assert math.dist(pos[i], pos[j]) > radii[i] + radii[j] + PLACEMENT_CLEARANCE
    assert np.all(np.hypot(*(w.all_goals() - pos).T) >= 1.0)
    assert np.all(pos >= radii[:, None]) and np.all(pos <= 3.0 - radii[:, None])


def test_world_arrays_are_read_only():
    w = sample_episode(ARENA, (3, 3), 0)
    with pytest.raises(ValueError):
        w.ped_pos[0, 0] = 1.0


def test_permuted_reorders_pedestrians():
    w = sample_episode(ARENA, (4, 4), 5)
    p = w.permuted([3, 1, 0, 2])
    assert np.array_equal(p.ped_pos, w.ped_pos[[3, 1, 0, 2]])
    assert np.array_equal(p.ego_pos, w.ego_pos)


def test_rng_streams_are_keyed():
    a = make_rng(1, 2, 3).random(4)
    assert np.array_equal(a, make_rng(1, 2, 3).random(4))
    assert not np.array_equal(a, make_rng(1, 3, 2).random(4))
    assert derive_seed(7, 1) == derive_seed(7, 1)
    assert derive_seed(7, 1) != derive_seed(7, 2)
    assert 0 <= derive_seed(2**63, 5) < 2**64


def test_context_validation():
    with pytest.raises(ValueError):
        sample_episode(ARENA, (5, 3), 0)
    with pytest.raises(ValueError):
        density(-1, ARENA)
