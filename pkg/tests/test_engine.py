from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from microexit import engine, obp
from microexit.errors import ConfigError, DataError
from microexit.metrics import confusion
from microexit.model import BASELINE, FOB, argmax_lowest


def _energy_profile(e_pred, e_fob, e_base):
    return engine.calibrate_profile({"obp": {"time_ms": 0, "energy_uj": e_pred},
                                     "fob": {"time_ms": 0, "energy_uj": e_fob},
                                     "baseline": {"time_ms": 0, "energy_uj": e_base}})


def test_money_rounds_half_up():
    assert engine.money("2.345") == Decimal("2.35")
    assert engine.money("1744.4692") == Decimal("1744.47")


def test_profile_validation():
    with pytest.raises(ConfigError):
        _energy_profile("-1", 1, 2)
    with pytest.raises(ConfigError):
        _energy_profile(1, 5, 4)
    with pytest.raises(ConfigError, match="lacks"):
        engine.calibrate_profile({"obp": {}, "fob": {}, "baseline": {}})


def test_shipped_profiles():
    w = engine.WHAR_COSTS
    assert (w.e_pred, w.e_fob, w.e_base) == (Decimal("29.86"), Decimal("401.73"), Decimal("488.74"))
    assert (w.f_fob, w.f_base) == (5799, 7575)
    assert engine.WHAR_LEDGER_COSTS.f_fob == 5779


def test_feasibility_examples():
    p = engine.WHAR_COSTS
    r = engine.energy_feasible(p, 4740, 4604, 136)
    assert r.feasible and r.adaptive_energy == Decimal("2057569.96")
    assert r.baseline_energy == Decimal("2316627.60")
    free = _energy_profile(0, 10, 20)
    assert not engine.energy_feasible(free, 10, 0, 10).feasible
    costly = _energy_profile(11, 10, 20)
    assert not engine.energy_feasible(costly, 10, 10, 0).feasible
    with pytest.raises(DataError):
        engine.energy_feasible(p, 10, 4, 5)


profiles = st.tuples(st.decimals("0", "100", places=2), st.decimals("0", "500", places=2),
                     st.decimals("0", "500", places=2)).map(
    lambda t: _energy_profile(t[0], min(t[1], t[2]), max(t[1], t[2])))
routings = st.integers(1, 5000).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n)))


@settings(max_examples=200, deadline=None)
@given(profiles, routings)
def test_feasibility_rearrangement(profile, routing):
    n, n1 = routing
    verdict = engine.energy_feasible(profile, n, n1, n - n1).feasible
    rearranged = profile.e_pred < Decimal(n1) / n * (profile.e_base - profile.e_fob)
    assert verdict == rearranged


@settings(max_examples=200, deadline=None)
@given(profiles, routings)
def test_adaptive_energy_bounds(profile, routing):
    n, n1 = routing
    e = engine.adaptive_average(profile, n1, n - n1).energy_uj
    assert profile.e_fob + profile.e_pred <= e <= profile.e_base + profile.e_pred


@settings(max_examples=100, deadline=None)
@given(profiles, routings, st.integers(0, 2**32 - 1))
def test_ledger_arithmetic(profile, routing, seed):
    n, n1 = routing
    rng = np.random.default_rng(seed)
    outcome = engine.routing_from_counts(n1, n - n1)
    ledger = engine.build_ledger(profile, outcome, rng.random(n) < 0.8, rng.random(n) < 0.9)
    base = ledger.row("Baseline", "Second")
    first, second = ledger.row("Adaptive", "First"), ledger.row("Adaptive", "Second")
    overall = ledger.row("Adaptive", "Overall")
    assert overall.energy_uj == first.energy_uj + second.energy_uj
    assert overall.flops == first.flops + second.flops
    assert ledger.total_saving[2] == base.energy_uj - overall.energy_uj
    assert ledger.average_saving[2] == engine.money(ledger.total_saving[2] / n)


def test_empty_ledger():
    ledger = engine.build_ledger(engine.WHAR_COSTS, engine.routing_from_counts(0, 0), [], [])
    assert all(r.energy_uj == 0 and r.flops == 0 for r in ledger.rows)
    assert ledger.average_saving == (Decimal("0.00"),) * 3


def test_zero_profile_gives_zero_totals():
    zero = _energy_profile(0, 0, 0)
    ledger = engine.build_ledger(zero, engine.routing_from_counts(5, 3), [True] * 8, [True] * 8)
    assert all(r.energy_uj == 0 and r.time_ms == 0 and r.flops == 0 for r in ledger.rows)


def test_ledger_text_and_csv():
    ledger = engine.build_ledger(engine.WHAR_COSTS, engine.routing_from_counts(3, 1),
                                 [True] * 4, [True] * 4)
    text = ledger.to_text()
    assert "Overall" in text and "average saving per segment" in text
    assert ledger.to_csv().splitlines()[0].startswith("architecture,block")


# -- routing ----------------------------------------------------------------------


def test_constant_trees_match_single_exits(trained, synthetic_arrays):
    x, f, y = synthetic_arrays
    net = trained.model
    for label, variant in ((1, "fob"), (2, "baseline")):
        tree = obp.constant_tree(label, f.shape[1])
        routed = engine.route(net, x, "adaptive", tree=tree, features=f)
        plain = engine.route(net, x, variant)
        np.testing.assert_array_equal(routed.predictions, plain.predictions)
        np.testing.assert_array_equal(confusion(y, routed.predictions, 4),
                                      confusion(y, plain.predictions, 4))


def test_single_segment_inference_matches_batch(trained, synthetic_arrays):
    x, f, _ = synthetic_arrays
    net = trained.model
    tree = obp.constant_tree(2, f.shape[1])
    batch = engine.route(net, x[:20], "cdln", threshold=0.8)
    for i in range(20):
        r = engine.cdln_infer(net, x[i], 0.8)
        assert (r.predicted, int(r.exit)) == (batch.predictions[i], batch.exits[i])
        a = engine.adaptive_infer(net, tree, x[i], f[i])
        assert a.exit == BASELINE and a.predicted == argmax_lowest(net.forward(x[i]))


def test_cdln_threshold_bounds(trained, synthetic_arrays):
    x = synthetic_arrays[0][:50]
    net = trained.model
    for bad in (0.0, 1.0 + 1e-9, -0.5):
        with pytest.raises(ConfigError):
            engine.route(net, x, "cdln", threshold=bad)
    assert engine.route(net, x, "cdln", threshold=1e-9).n_fob == 50
    p1 = net.forward(x, FOB)
    expect_base = int((p1.max(axis=1) < 1.0).sum())
    assert engine.route(net, x, "cdln", threshold=1.0).n_base == expect_base


def test_cdln_monotone_for_random_model(rng):
    from microexit.model import ModelConfig, build

    net = build(ModelConfig(num_classes=5), seed=7)
    x = rng.normal(size=(300, 32, 7))
    counts = [engine.route(net, x, "cdln", threshold=th).n_base
              for th in np.linspace(0.05, 1.0, 25)]
    assert counts == sorted(counts)


def test_oracle_routing_beats_both_exits(trained, synthetic_arrays):
    x, _, y = synthetic_arrays
    fob, base = (engine.route(trained.model, x, v).predictions for v in ("fob", "baseline"))
    oracle = engine.oracle_routing(fob, base, y)
    acc = np.mean(oracle.predictions == y)
    assert acc >= max(np.mean(fob == y), np.mean(base == y))


def test_unknown_variant():
    with pytest.raises(ConfigError):
        engine.route(None, np.zeros((1, 32, 7)), "bogus")
