import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpexplore.config import ScenarioConfig
from fpexplore.mapping import UNKNOWN, SensorModel
from fpexplore.simengine import (CommModel, Simulation, comm_components, count_overlaps,
                                 overlap_events, run)
from fpexplore.worldgen import GroundTruthGrid, Pose, WorldSpec


def _cfg(**kw):
    base = dict(world=WorldSpec(16, 16, resolution=1.0, tree_density=0.1),
                sensor=SensorModel(range=5.0), n_r=2, tick_budget=200)
    base.update(kw)
    return ScenarioConfig(**base)


def _grid(occ):
    occ = np.asarray(occ, dtype=bool)
    spec = WorldSpec(occ.shape[1], occ.shape[0], resolution=1.0, tree_density=0.0,
                     spawn_clearing=None)
    return GroundTruthGrid(occ, spec, np.zeros((0, 2)), np.zeros(0))


# ---------------------------------------------------------------- components


def test_comm_components_examples():
    two = [Pose(0.0, 0.0), Pose(15.0, 0.0)]
    assert comm_components(two, 10.0) == [[0], [1]]
    assert comm_components(two, math.inf) == [[0, 1]]
    chain = [Pose(0.0, 0.0), Pose(16.0, 0.0), Pose(8.0, 0.0)]
    assert comm_components(chain, 10.0) == [[0, 1, 2]]
    with pytest.raises(ValueError):
        CommModel(0.0)


def test_separated_robots_keep_independent_maps():
    cfg = _cfg(world=WorldSpec(30, 10, resolution=1.0, tree_density=0.0, spawn_clearing=None),
               comm_range=10.0, n_r=2)
    sim = Simulation(cfg, 0, starts=[Pose(2.5, 5.5), Pose(17.5, 5.5)])
    sim.step()
    assert sim.components == [[0], [1]]
    assert not np.array_equal(sim.beliefs[0].cells, sim.beliefs[1].cells)
    assert set(sim.last_pools) == {0, 1}


# ---------------------------------------------------------------- overlaps


def _overlap_oracle(traces):
    count = 0
    for i, tr in enumerate(traces):
        done = set()
        for t, cell in tr:
            if cell in done:
                continue
            done.add(cell)
            if any(t2 < t and c2 == cell for j, other in enumerate(traces) if j != i
                   for t2, c2 in other):
                count += 1
    return count


def test_overlap_examples():
    assert count_overlaps([[(0, (0, 0)), (1, (0, 1)), (2, (0, 0))]]) == 0
    assert count_overlaps([[(0, (0, 0))], [(0, (5, 5)), (1, (5, 6))]]) == 0
    k = 6
    a = [(t, (0, t)) for t in range(k)]
    b = [(t, (0, k - 1 - t)) for t in range(k)]
    # cell j is reached at ticks j and k-1-j; with k even the later robot always overlaps
    assert count_overlaps([a, b]) == _overlap_oracle([a, b]) == k
    events = overlap_events([a, b])
    assert all(t > 0 for _, _, t in events)


cells = st.tuples(st.integers(0, 4), st.integers(0, 4))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(cells, min_size=1, max_size=15), min_size=1, max_size=4))
def test_overlaps_match_brute_force(raw):
    traces = [[(t, c) for t, c in enumerate(tr)] for tr in raw]
    assert count_overlaps(traces) == _overlap_oracle(traces)


# ---------------------------------------------------------------- runs


@pytest.fixture(scope="module")
def finished():
    sims = []
    for cfg in (_cfg(), _cfg(mode="baseline", policy="froshe", n_r=3),
                _cfg(clustering="kmeans_hd", kmeans_k=3, comm_range=6.0, n_r=3)):
        sim = Simulation(cfg, 3)
        sim.run()
        sims.append(sim)
    return sims


def test_run_invariants(finished):
    for sim in finished:
        m = sim.metrics
        cov = [c for _, c in m.coverage_trace]
        assert all(b >= a for a, b in zip(cov, cov[1:]))
        assert sum(m.newly_known) == m.final_known == int((sim.team_belief().cells != UNKNOWN).sum())
        assert m.termination in ("coverage", "explored", "timeout")
        assert m.ticks == len(m.coverage_trace)
        assert m.overlaps >= 0
        for trace in sim.cell_traces:
            for (t0, c0), (t1, c1) in zip(trace, trace[1:]):
                assert t1 >= t0
                assert max(abs(c1[0] - c0[0]), abs(c1[1] - c0[1])) == 1
            assert not any(sim.world.occupied[c] for _, c in trace)
        for r in sim.robots:
            assert not sim.world.occupied[sim.world.cell_of(r.pose.x, r.pose.y)]
        per_robot = {}
        for t, i, bits in m.entropy_trace:
            per_robot.setdefault(i, []).append(bits)
        assert all(all(b <= a for a, b in zip(v, v[1:])) for v in per_robot.values())


def test_fp_runs_audit_priorities(finished):
    dp, base, km = (s.metrics for s in finished)
    assert dp.prioritize_calls > 0 and dp.min_dpgmm_joint > 0 and dp.max_active_components >= 1
    assert base.prioritize_calls == 0 and base.latencies == []
    assert km.priority_checks > 0 and km.max_kmeans_outside == 0.0


def test_determinism():
    cfg = _cfg(n_r=3)
    a, b = Simulation(cfg, 7), Simulation(cfg, 7)
    ma, mb = a.run(), b.run()
    for name in ("ticks", "coverage_trace", "path_lengths", "overlaps", "termination",
                 "newly_known", "max_active_components", "entropy_trace"):
        assert getattr(ma, name) == getattr(mb, name)
    assert a.trace == b.trace and a.cell_traces == b.cell_traces
    assert np.array_equal(a.team_belief().cells, b.team_belief().cells)


def test_merge_is_symmetric_within_components():
    sim = Simulation(_cfg(n_r=4, comm_range=8.0), 2)
    for _ in range(15):
        if sim.done:
            break
        sim.step()
        for comp in sim.components:
            for i in comp[1:]:
                assert np.array_equal(sim.beliefs[i].cells, sim.beliefs[comp[0]].cells)


def test_infinite_range_single_component():
    sim = Simulation(_cfg(n_r=4), 1)
    for _ in range(5):
        sim.step()
        assert sim.components == [[0, 1, 2, 3]]


def test_empty_world_completes_quickly():
    cfg = _cfg(world=WorldSpec(10, 10, resolution=1.0, tree_density=0.0), n_r=1,
               sensor=SensorModel(range=30.0))
    m = run(cfg, seed=0)
    assert m.termination == "coverage" and m.ticks <= 2 and m.coverage == 1.0


def test_timeout():
    m = run(_cfg(world=WorldSpec(32, 32, resolution=1.0, tree_density=0.1), tick_budget=3), 0)
    assert m.termination == "timeout" and m.ticks == 3


def test_unobservable_pocket_ends_explored():
    occ = np.zeros((9, 9), dtype=bool)
    # cell (5, 5) is reachable only diagonally from (4, 4), between two obstacles
    for c in [(4, 5), (5, 4), (4, 6), (6, 4), (5, 6), (6, 5), (6, 6)]:
        occ[c] = True
    cfg = _cfg(world=WorldSpec(9, 9, resolution=1.0, tree_density=0.0, spawn_clearing=None),
               n_r=1, coverage_threshold=1.0)
    sim = Simulation(cfg, 0, world=_grid(occ), starts=[Pose(1.5, 1.5)])
    m = sim.run()
    assert sim.reachable[5, 5]
    assert m.termination == "explored"
    assert m.coverage < 1.0


def test_step_after_termination_raises():
    cfg = _cfg(world=WorldSpec(6, 6, resolution=1.0, tree_density=0.0), n_r=1,
               sensor=SensorModel(range=20.0))
    sim = Simulation(cfg, 0)
    sim.run()
    with pytest.raises(RuntimeError):
        sim.step()


def test_trace_records(tmp_path):
    sim = Simulation(_cfg(), 0)
    sim.run()
    path = tmp_path / "trace.jsonl"
    sim.write_trace(path)
    lines = path.read_text().splitlines()
    assert len(lines) == len(sim.trace) > 0
    assert any('"event": "select"' in ln and '"breakdown"' in ln for ln in lines)
