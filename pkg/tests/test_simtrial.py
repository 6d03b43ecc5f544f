import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from switchiv.dataset import write_subjects
from switchiv.methods import estimator
from switchiv.simtrial import (SimConfig, SimConfigError, generate, monte_carlo, read_truth,
                               replicate_seeds)
from switchiv.survival import kaplan_meier, sup_distance


def test_same_seed_same_bytes(tmp_path):
    cfg = SimConfig(n=300, switch_rule="hazard", frailty_mean=4e-4, switch_frailty=1.0)
    for k in (1, 2):
        t = generate(cfg, 99)
        write_subjects(t.dataset, tmp_path / f"s{k}.csv")
        t.export_truth(tmp_path / f"t{k}.csv")
    assert (tmp_path / "s1.csv").read_bytes() == (tmp_path / "s2.csv").read_bytes()
    assert (tmp_path / "t1.csv").read_bytes() == (tmp_path / "t2.csv").read_bytes()
    other = generate(cfg, 100).dataset
    assert not np.array_equal(other.time, generate(cfg, 99).dataset.time)


def test_default_seed_comes_from_config():
    cfg = SimConfig(n=50, seed=5)
    assert np.array_equal(generate(cfg).dataset.time, generate(cfg, 5).dataset.time)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_null_effect_gives_identical_counterfactuals(seed):
    t = generate(SimConfig(n=40, beta=0.0, frailty_mean=2e-4, pd_effect=3e-4,
                           switch_rule="at_progression"), seed)
    assert np.array_equal(t.t0, t.t1)


def test_positive_effect_orders_counterfactuals():
    t = generate(SimConfig(n=4000, beta=2e-4), 8)
    assert t.t0.mean() > t.t1.mean()
    assert np.all(t.t0 >= t.t1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_consistency_linking(seed):
    cfg = SimConfig(n=60, frailty_mean=3e-4, pd_effect=4e-4, prog_frailty=1.0,
                    switch_rule="hazard", switch_rate=2e-3, switch_pd=1.0)
    t = generate(cfg, seed)
    d = t.dataset
    exp_arm = d.arm == 0
    assert np.array_equal(t.t_realized[exp_arm], t.t0[exp_arm])
    ctrl_stay = (d.arm == 1) & (t.latent_switch >= t.t_realized)
    assert np.array_equal(t.t_realized[ctrl_stay], t.t1[ctrl_stay])
    # switchers sit between the two extreme regimes
    sw = (d.arm == 1) & ~ctrl_stay
    assert np.all((t.t_realized[sw] >= t.t1[sw]) & (t.t_realized[sw] <= t.t0[sw]))
    # observed time is the realized time censored
    assert np.all(d.time <= t.t_realized + 1e-12)
    assert np.all(d.time[d.event == 1] == t.t_realized[d.event == 1])


def test_truth_round_trip(tmp_path):
    t = generate(SimConfig(n=30, frailty_mean=1e-4), 2)
    t.export_truth(tmp_path / "truth.csv")
    back = read_truth(tmp_path / "truth.csv")
    assert list(back["id"]) == list(t.dataset.ids)
    for key, arr in (("t0", t.t0), ("t1", t.t1), ("t_uncensored", t.t_realized),
                     ("frailty", t.frailty)):
        assert np.array_equal(back[key], arr)


def test_exchangeable_arms_without_effect():
    d = generate(SimConfig(n=20000, beta=0.0), 4).dataset
    km_c = kaplan_meier(d.subset(d.arm == 1))
    km_e = kaplan_meier(d.subset(d.arm == 0))
    grid = np.linspace(0, 900, 901)
    assert sup_distance(km_c, km_e, grid) < 0.02


def test_switch_fraction_tracks_switch_rate():
    base = SimConfig(n=3000, switch_rule="hazard", switch_rate=5e-4)
    lo = generate(base, 1).dataset
    hi = generate(replace(base, switch_rate=3e-3), 1).dataset
    frac = [np.isfinite(x.switch[x.arm == 1]).mean() for x in (lo, hi)]
    assert frac[0] < frac[1]
    never = generate(replace(base, switch_rule="never"), 1).dataset
    assert not np.isfinite(never.switch).any()


def test_config_errors():
    with pytest.raises(SimConfigError, match="not positive"):
        SimConfig(a0=1e-4, a_cov=(-5e-4, 0.0)).check()
    with pytest.raises(SimConfigError, match="switch_rule"):
        SimConfig(switch_rule="sometimes").check()
    with pytest.raises(SimConfigError, match="unknown config field"):
        SimConfig.from_dict({"n": 10, "bogus": 1})


def test_config_file_round_trip(tmp_path):
    cfg = SimConfig(n=123, switch_cov=(0.5, 0.1), switch_rule="hazard")
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    assert SimConfig.load(tmp_path / "c.json") == cfg
    (tmp_path / "c.toml").write_text('n = 123\nswitch_rule = "hazard"\nswitch_cov = [0.5, 0.1]\n')
    assert SimConfig.load(tmp_path / "c.toml") == cfg
    assert cfg.digest() == SimConfig.load(tmp_path / "c.json").digest()


def test_replicate_seeds_stable():
    a = replicate_seeds(1, 5)
    assert a == replicate_seeds(1, 5)
    assert a[:3] == replicate_seeds(1, 3)
    assert len(set(a)) == 5


def test_monte_carlo_needs_two_reps():
    with pytest.raises(ValueError):
        monte_carlo(SimConfig(n=50), estimator("treatment-policy"), reps=1)


def test_monte_carlo_independent_of_workers():
    cfg = SimConfig(n=150, switch_rule="at_progression")
    est = {"tp": estimator("treatment-policy"), "iv": estimator("iv-initial", with_ci=False)}
    one = monte_carlo(cfg, est, reps=6, n_jobs=1)
    two = monte_carlo(cfg, est, reps=6, n_jobs=2)
    for name in est:
        assert np.array_equal(one[name].estimates, two[name].estimates)
        assert json.dumps(one[name].row()) == json.dumps(two[name].row())


def test_monte_carlo_summary_fields():
    cfg = SimConfig(n=200)
    s = monte_carlo(cfg, {"tp": estimator("treatment-policy")}, reps=4)["tp"]
    assert s.reps == 4 and s.failures == 0
    assert s.bias == pytest.approx(s.mean - cfg.beta)
    assert 0 <= s.coverage <= 1 and 0 <= s.rejection <= 1


@pytest.mark.parametrize("name", ["confounded", "pd_driven"])
def test_script_configs_match_test_designs(name):
    from pathlib import Path

    from conftest import CONFOUNDED, PD_DRIVEN
    path = Path(__file__).parents[1] / "scripts" / "configs" / f"{name}.toml"
    want = {"confounded": CONFOUNDED, "pd_driven": PD_DRIVEN}[name]
    got = SimConfig.load(path)
    assert replace(got, seed=want.seed) == want
