import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from latticeopt import anneal, fem, lattice, mlp
from latticeopt.anneal import SAConfig
from latticeopt.features import FeaturePipeline
from latticeopt.lattice import GridSpec, UnitTopology
from latticeopt.mlp import TrainConfig


def test_penalized_objective():
    assert anneal.penalized_objective(0.8, 0.25, 10.0, 0.26) == 0.8
    assert anneal.penalized_objective(0.8, 0.27, 10.0, 0.26) == pytest.approx(0.9)
    assert anneal.penalized_objective(1.0, 0.26, 10.0, 0.26) == 1.0


@given(st.integers(0, 2**30), st.integers(1, 8))
def test_neighbor_flips_within_one_subregion(seed, n_v):
    rng = np.random.default_rng(seed)
    x = lattice.ground(4)
    cand = anneal.neighbor(x, rng, n_v)
    flipped = np.flatnonzero(cand.bits != x.bits)
    assert 1 <= len(flipped) <= n_v
    table = lattice.incidence_table(4)
    assert any(set(flipped) <= set(row) for row in table)


def test_neighbor_handles_m1_wraparound():
    rng = np.random.default_rng(0)
    for _ in range(50):
        cand = anneal.neighbor(lattice.ground(1), rng, 8)
        flipped = np.flatnonzero(cand.bits != lattice.ground(1).bits)
        assert 1 <= len(flipped) <= 4  # only 4 distinct members exist


def test_neighbor_subregion_choice_is_uniform():
    rng = np.random.default_rng(123)
    m = 4
    draws = 100_000
    x = lattice.empty(m)
    table = lattice.incidence_table(m)
    owners = {}
    for node, row in enumerate(table):
        for member in row:
            owners.setdefault(int(member), []).append(node)
    counts = np.zeros(m * m)
    for _ in range(draws):
        cand = anneal.neighbor(x, rng, 1)
        member = int(np.flatnonzero(cand.bits)[0])
        # a single flipped member identifies 2 subregions; count both halves
        counts[owners[member]] += 0.5
    p = 1.0 / (m * m)
    sigma = math.sqrt(p * (1 - p) / draws)
    # each member borders 2 subregions, so the halved counts stay unbiased
    assert np.all(np.abs(counts / draws - p) < 5 * sigma + 0.25 * p)


def test_transition_probability_cases():
    assert anneal.transition_probability(1.0, 2.0, 1.0, 0.5) == 1.0
    assert anneal.transition_probability(2.0, 2.0, 1.0, 0.5) == 1.0  # exp(0)
    y0 = 3.0
    s = 0.1 * y0 / math.log(2.0)
    assert anneal.transition_probability(2.0 + 0.1 * y0, 2.0, 1.0, s) == pytest.approx(0.5)
    assert anneal.transition_probability(2.5, 2.0, 0.0, s) == 0.0
    assert anneal.transition_probability(math.inf, 2.0, 1.0, s) == 0.0
    assert anneal.transition_probability(1.9, 2.0, 0.0, s) == 1.0


def _train_tiny_model(dataset):
    cfg = TrainConfig(epochs=3, batch_size=32, seed=2, hidden_dims=(32, 16, 8))
    model, _ = mlp.train(dataset, FeaturePipeline(n_m=2), cfg)
    return model


def test_run_rejects_unstable_initial():
    with pytest.raises(ValueError, match="unstable"):
        anneal.run(lattice.empty(2), SAConfig(p=10, n_s=1, gate=False))


def test_run_requires_surrogate_when_gated():
    with pytest.raises(ValueError, match="surrogate"):
        anneal.run(lattice.ground(2), SAConfig(gate=True))


def test_ungated_run_analyzes_every_iteration():
    cfg = SAConfig(p=40, n_s=5, seed=3, gate=False)
    res = anneal.run(lattice.ground(2), cfg)
    assert res.iteration_count == 200
    assert res.analysis_count == 200
    assert np.all(res.history["analyzed"] == 1)


def test_temperature_schedule_exact():
    cfg = SAConfig(p=25, n_s=4, seed=3, gate=False, a=0.5)
    res = anneal.run(lattice.ground(2), cfg)
    t = res.history["T"]
    for k in range(res.iteration_count):
        assert t[k] == 0.5 ** ((k) // 25)  # temperature in effect during iter k+1


def test_gate_threshold_trace_steps(tiny_dataset_m2):
    model = _train_tiny_model(tiny_dataset_m2)
    cfg = SAConfig(p=60, n_s=2, seed=5, gate=True)
    res = anneal.run(lattice.ground(2), cfg, surrogate=model)
    c = res.history["c"]
    _, r0 = fem.analyze(lattice.ground(2), GridSpec(2))
    v0 = lattice.unit_volume(lattice.ground(2), GridSpec(2))
    y0 = anneal.penalized_objective(r0.compliance, v0, cfg.lam, cfg.v_c)
    prev = y0
    for k in range(res.iteration_count):
        delta = c[k] - prev
        assert delta == pytest.approx(-cfg.w_d) or delta == pytest.approx(cfg.w_i)
        prev = c[k]
    # at least one skip must have happened for the gate to be exercised
    assert res.analysis_count < res.iteration_count or np.all(res.history["analyzed"] == 1)


def test_gated_and_ungated_share_candidates_until_first_skip(tiny_dataset_m2):
    model = _train_tiny_model(tiny_dataset_m2)
    seed = 6
    gated = anneal.run(
        lattice.ground(2), SAConfig(p=80, n_s=2, seed=seed, gate=True), surrogate=model
    )
    ungated = anneal.run(lattice.ground(2), SAConfig(p=80, n_s=2, seed=seed, gate=False))
    skips = np.flatnonzero(gated.history["analyzed"] == 0)
    upto = skips[0] if len(skips) else gated.iteration_count
    assert np.array_equal(
        gated.history["y_current"][:upto], ungated.history["y_current"][:upto]
    )


def test_best_feasible_reanalyzes_to_recorded_values(tiny_dataset_m2):
    cfg = SAConfig(p=100, n_s=3, seed=7, gate=False, v_c=0.30)
    res = anneal.run(lattice.ground(2), cfg)
    best = res.best_feasible
    assert best is not None
    assert best.volume <= cfg.v_c
    x = UnitTopology(2, best.bits)
    volume, check = fem.analyze(x, GridSpec(2), cfg.threshold)
    assert check.stable
    assert check.compliance == best.compliance
    assert volume == best.volume
    assert res.best_penalized.penalized <= best.penalized + 1e-15


def test_analysis_counter_bounded_by_iterations(tiny_dataset_m2):
    model = _train_tiny_model(tiny_dataset_m2)
    cfg = SAConfig(p=50, n_s=2, seed=8, gate=True)
    res = anneal.run(lattice.ground(2), cfg, surrogate=model)
    assert res.analysis_count <= res.iteration_count
    assert np.sum(res.history["analyzed"]) == res.analysis_count


def test_local_mode_trace_nonincreasing():
    cfg = SAConfig(p=200, n_s=10, seed=9, gate=False, mode=anneal.MODE_LOCAL)
    res = anneal.run(lattice.ground(2), cfg)
    assert res.iteration_count == 200  # p iterations total, n_s ignored
    y = res.history["y_current"]
    assert np.all(np.diff(y) <= 1e-15)
    assert np.all(res.history["T"] == 0.0)


def test_history_best_feasible_column(tiny_dataset_m2):
    cfg = SAConfig(p=60, n_s=2, seed=10, gate=False, v_c=0.60)
    res = anneal.run(lattice.ground(2), cfg)
    hb = res.history["best_feasible_g"]
    assert np.all(np.isfinite(hb))  # v_c above the initial volume: feasible from start
    assert np.all(np.diff(hb) <= 0.0)
    assert hb[-1] == res.best_feasible.compliance


def test_history_best_feasible_infinite_until_first_feasible():
    cfg = SAConfig(p=400, n_s=1, seed=10, gate=False, v_c=0.26)
    res = anneal.run(lattice.ground(2), cfg)
    hb = res.history["best_feasible_g"]
    finite = np.isfinite(hb)
    if finite.any():
        first = np.argmax(finite)
        assert np.all(~finite[:first]) and np.all(finite[first:])
        tail = hb[finite]
        assert np.all(np.diff(tail) <= 0.0)


def test_brute_force_m1_matches_manual_enumeration():
    spec = GridSpec(1)
    lam, v_c, threshold = 10.0, 0.30, 5.0
    best_pen, best_feas = anneal.brute_force(1, spec, lam, v_c, threshold)

    evaluator = fem.get_evaluator(spec)
    best_g, best_comp = math.inf, math.inf
    for assignment in itertools.product((0, 1), repeat=4):
        x = UnitTopology(1, np.asarray(assignment, dtype=np.uint8))
        volume, res = evaluator.analyze(x, threshold)
        if not res.stable:
            continue
        g = res.compliance + lam * max(volume - v_c, 0.0)
        best_g = min(best_g, g)
        if volume <= v_c:
            best_comp = min(best_comp, res.compliance)
    assert best_pen.penalized == pytest.approx(best_g, rel=1e-15)
    assert best_feas.compliance == pytest.approx(best_comp, rel=1e-15)


def test_brute_force_uncapped_volume_gives_min_compliance():
    spec = GridSpec(1)
    ground_vol = lattice.unit_volume(lattice.ground(1), spec)
    best_pen, best_feas = anneal.brute_force(1, spec, v_c=ground_vol + 1.0)
    assert best_pen.penalized == best_pen.compliance
    assert best_feas.compliance == best_pen.compliance


def test_brute_force_rejects_large_m():
    with pytest.raises(ValueError):
        anneal.brute_force(3)


def test_config_validation():
    with pytest.raises(ValueError):
        SAConfig(a=1.5)
    with pytest.raises(ValueError):
        SAConfig(n_v=0)
    with pytest.raises(ValueError):
        SAConfig(mode="warp")
    with pytest.raises(ValueError):
        SAConfig(lam=0.0)


def test_result_files_round_trip(tmp_path):
    cfg = SAConfig(p=30, n_s=2, seed=12, gate=False)
    res = anneal.run(lattice.ground(2), cfg)
    out = tmp_path / "result.json"
    hist = tmp_path / "history.csv"
    anneal.save_result(res, out)
    anneal.save_history(res, hist)
    import json

    doc = json.loads(out.read_text())
    assert doc["analysis_count"] == res.analysis_count
    assert doc["config"]["p"] == 30
    assert doc["best_feasible"] is None or set(doc["best_feasible"]) == {
        "bits", "compliance", "volume", "penalized",
    }
    lines = hist.read_text().splitlines()
    assert lines[0] == "iter,T,c,analyzed,y_current,best_feasible_g"
    assert len(lines) == 1 + res.iteration_count
