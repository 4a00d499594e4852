import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdpss.evalbench import (
    SWEEP_DENSITIES,
    EmptyInput,
    EpisodeRecord,
    OrcaEgo,
    RandomEgo,
    compute_metrics,
    density_sweep,
    episode_seed,
    parse_raw_csv,
    raw_csv,
    run_episode,
    summary_csv,
)
from crowdpss.sim import OutcomeKind, ScenarioConfig, SimParams

from conftest import make_world


def rec(outcome, seed=0, episode=0, collisions=0, freeze=0.0, method="m", n=11):
    return EpisodeRecord(method, n, seed, episode, outcome, collisions, freeze, 50, 0.1)


def test_orca_alone_reaches_goal_safely():
    w = make_world(ego_pos=(0.5, 0.5), ego_goal=(2.5, 2.5), ped_pos=np.zeros((0, 2)))
    r = run_episode(OrcaEgo(), w)
    assert r.outcome is OutcomeKind.SAFE_SUCCESS and r.collision_steps == 0


def test_random_scores_below_orca_at_n15():
    sc = ScenarioConfig()
    recs = []
    for ego in (OrcaEgo(), RandomEgo()):
        recs += density_sweep(ego, (15,), (0,), 20, sc)
    m = compute_metrics(recs)
    assert m[("random", 15)].safe_success_rate < m[("orca", 15)].safe_success_rate


def test_episode_record_deterministic():
    w = ScenarioConfig().sample(123, (13, 13))
    a = run_episode(RandomEgo(), w, keep_trace=True)
    b = run_episode(RandomEgo(), w, keep_trace=True)
    assert a.row() == b.row()
    for (x, wx, _), (y, wy, _) in zip(a.trace, b.trace):
        assert np.array_equal(x, y) and np.array_equal(wx.ped_pos, wy.ped_pos)


def test_metrics_examples():
    m = compute_metrics([rec(OutcomeKind.SAFE_SUCCESS, episode=i) for i in range(10)])[("m", 11)]
    assert m.safe_success_rate == 1.0 and m.collisions_per_episode == 0.0
    recs = [rec(OutcomeKind.SAFE_SUCCESS, episode=i) for i in range(4)] + [rec(OutcomeKind.UNSAFE_SUCCESS, episode=4, collisions=2)]
    m = compute_metrics(recs)[("m", 11)]
    assert (m.safe_success_rate, m.unsafe_success_rate, m.goal_reach_rate) == (0.8, 0.2, 1.0)
    assert m.collisions_per_episode == pytest.approx(0.4)
    m = compute_metrics([rec(OutcomeKind.TIMEOUT, freeze=1.0)])[("m", 11)]
    assert m.freezing_rate == 1.0 and m.timeout_rate == 1.0
    with pytest.raises(EmptyInput):
        compute_metrics([])


def test_metrics_std_across_seeds():
    recs = [rec(OutcomeKind.SAFE_SUCCESS, seed=0), rec(OutcomeKind.TIMEOUT, seed=1)]
    m = compute_metrics(recs)[("m", 11)]
    assert m.per_seed_safe == (1.0, 0.0)
    assert m.safe_success_std == pytest.approx(np.std([1.0, 0.0], ddof=1))


@given(st.lists(st.tuples(st.sampled_from(list(OutcomeKind)), st.integers(0, 5)), min_size=1, max_size=40))
@settings(max_examples=60, deadline=None)
def test_outcome_partition(items):
    recs = []
    for i, (kind, c) in enumerate(items):
        c = 0 if kind is OutcomeKind.SAFE_SUCCESS else (max(c, 1) if kind is OutcomeKind.UNSAFE_SUCCESS else c)
        recs.append(rec(kind, episode=i, collisions=c))
    m = compute_metrics(recs)[("m", 11)]
    assert m.safe_success_rate + m.unsafe_success_rate + m.timeout_rate == pytest.approx(1.0)
    assert sum(v for _, v in m.category_rates) == pytest.approx(1.0)


def test_csv_reparse_equals_memory():
    recs = density_sweep(RandomEgo(), (11,), (0, 1), 3)
    back = parse_raw_csv(raw_csv(recs))
    assert [r.row() for r in back] == [r.row() for r in recs]
    assert summary_csv(compute_metrics(back)) == summary_csv(compute_metrics(recs))


def test_episode_seeds_do_not_collide():
    seeds = {episode_seed(s, n, e) for n in SWEEP_DENSITIES for s in range(5) for e in range(100)}
    assert len(seeds) == 6 * 5 * 100


def test_single_cell_sweep():
    recs = density_sweep(OrcaEgo(), (11,), (0,), 1)
    assert len(recs) == 1
    assert summary_csv(compute_metrics(recs)).count("\n") == 2


def test_sweep_csv_independent_of_workers():
    a = raw_csv(density_sweep(RandomEgo(), (11, 13), (0, 1), 3, workers=1))
    b = raw_csv(density_sweep(RandomEgo(), (11, 13), (0, 1), 3, workers=2))
    c = raw_csv(density_sweep(RandomEgo(), (11, 13), (0, 1), 3, workers=1))
    assert a == b == c
