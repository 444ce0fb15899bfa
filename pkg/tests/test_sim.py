import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pridg.sim import (
    P1,
    P2,
    P3,
    P4,
    P_TRAIN,
    PRESETS,
    CorruptionStats,
    EmitterSpec,
    Modulation,
    PriSequence,
    ScenarioParams,
    ToaSequence,
    add_measurement_error,
    add_spurious,
    corrupted_stream,
    default_roster,
    drop_pulses,
    emitter_name,
    fit_length,
    gen_clean_toa,
    load_dataset,
    load_roster,
    make_dataset,
    missing_ratio,
    normalization_scale,
    save_dataset,
    save_roster,
    toa_to_pri,
)


def _uniform_train(n, pri=1000.0):
    return ToaSequence(np.arange(n) * pri)


def test_preset_values():
    assert P_TRAIN.as_tuple() == (0.05, 0.2, 0.4)
    assert P1.as_tuple() == (0.02, 0.05, 0.2)
    assert P2.as_tuple() == (0.05, 0.2, 0.4)
    assert P3.as_tuple() == (0.05, 0.3, 0.6)
    assert P4.as_tuple() == (0.1, 0.5, 0.8)
    assert set(PRESETS) == {"train", "p1", "p2", "p3", "p4"}


@pytest.mark.parametrize("args", [(0.05, 1.0, 0.4), (0.05, -0.1, 0.4), (0.05, 0.2, -1), (-0.1, 0.2, 0.4)])
def test_scenario_rejects_out_of_range(args):
    with pytest.raises(ValueError):
        ScenarioParams(*args)


def test_default_roster_shape():
    roster = default_roster()
    assert len(roster) == 10
    mods = [s.modulation for s in roster]
    for m in (Modulation.CONSTANT, Modulation.JITTERED, Modulation.SLIDING, Modulation.WOBULATED, Modulation.DWELL_SWITCH):
        assert mods.count(m) == 1
    stg = [s for s in roster if s.modulation == Modulation.STAGGERED]
    assert [emitter_name(s) for s in stg] == ["STG1", "STG2", "STG3", "STG4", "STG5"]
    level_sets = {frozenset(s.params["levels"]) for s in stg}
    assert len(level_sets) == 5
    assert all(3 <= len(s.params["levels"]) <= 5 for s in stg)
    assert [s.id for s in roster] == list(range(10))
    # every PRI the roster can produce lies in the 100..3000 us band
    for s in roster:
        pris = toa_to_pri(gen_clean_toa(s, 200, seed=0)).pris
        assert pris.min() >= 100 and pris.max() <= 3000
    assert normalization_scale(roster) == 2 * max(s.max_pri for s in roster)


def test_roster_round_trip(tmp_path):
    roster = default_roster()
    save_roster(roster, tmp_path / "r.json")
    assert load_roster(tmp_path / "r.json") == roster


def test_emitter_spec_validation():
    with pytest.raises(ValueError):
        EmitterSpec(0, Modulation.STAGGERED, 500.0, {"levels": []})
    with pytest.raises(ValueError):
        EmitterSpec(0, Modulation.CONSTANT, -1.0)
    with pytest.raises(ValueError):
        EmitterSpec(0, Modulation.DWELL_SWITCH, 500.0, {"levels": [1.0, 2.0], "dwells": [3]})


def test_clean_modulation_laws():
    cst = EmitterSpec(0, Modulation.CONSTANT, 850.0)
    np.testing.assert_array_equal(toa_to_pri(gen_clean_toa(cst, 10)).pris, 850.0)
    stg = EmitterSpec(1, Modulation.STAGGERED, 500.0, {"levels": [400.0, 500.0, 600.0]})
    np.testing.assert_array_equal(toa_to_pri(gen_clean_toa(stg, 7)).pris, [400, 500, 600, 400, 500, 600])
    np.testing.assert_array_equal(toa_to_pri(gen_clean_toa(stg, 4, offset=1)).pris, [500, 600, 400])
    sld = EmitterSpec(2, Modulation.SLIDING, 500.0, {"start": 300.0, "end": 700.0, "steps": 5})
    np.testing.assert_allclose(toa_to_pri(gen_clean_toa(sld, 7)).pris, [300, 400, 500, 600, 700, 300])
    ds = EmitterSpec(3, Modulation.DWELL_SWITCH, 500.0, {"levels": [100.0, 200.0], "dwells": [2, 1]})
    np.testing.assert_array_equal(toa_to_pri(gen_clean_toa(ds, 7)).pris, [100, 100, 200, 100, 100, 200])
    wob = EmitterSpec(4, Modulation.WOBULATED, 1000.0, {"amplitude": 0.2, "period": 4})
    np.testing.assert_allclose(toa_to_pri(gen_clean_toa(wob, 5)).pris, [1000, 1200, 1000, 800], atol=1e-9)


def test_jitter_mean_and_bounds():
    jit = EmitterSpec(0, Modulation.JITTERED, 1000.0, {"jitter": 0.1})
    pris = toa_to_pri(gen_clean_toa(jit, 100_001, seed=0)).pris
    assert abs(pris.mean() - 1000) < 5
    assert pris.min() >= 900 and pris.max() <= 1100


def test_toa_sequence_validation():
    with pytest.raises(ValueError):
        ToaSequence([0.0, 2.0, 1.0])
    with pytest.raises(ValueError):
        PriSequence([1.0, 0.0])


# -- drop_pulses ---------------------------------------------------------------


def test_drop_zero_is_identity():
    toa = _uniform_train(50)
    out, stats = drop_pulses(toa, 0.0, seed=1)
    np.testing.assert_array_equal(out.toas, toa.toas)
    assert stats.dropped_per_period.sum() == 0


def test_drop_missing_ratio_monte_carlo():
    _, stats = drop_pulses(_uniform_train(100_000), 0.2, seed=0)
    assert 0.19 <= missing_ratio(stats) <= 0.21


def test_drop_is_deterministic_and_keeps_first():
    toa = _uniform_train(10)
    a, _ = drop_pulses(toa, 0.5, seed=42)
    b, _ = drop_pulses(toa, 0.5, seed=42)
    np.testing.assert_array_equal(a.toas, b.toas)
    assert a.toas[0] == 0.0
    # surviving pulses keep their arrival times
    assert set(a.toas) <= set(toa.toas)


@pytest.mark.parametrize("rho", [-0.1, 1.0, 1.5])
def test_drop_rejects_bad_ratio(rho):
    with pytest.raises(ValueError):
        drop_pulses(_uniform_train(10), rho)


def test_missing_ratio_example():
    assert missing_ratio(CorruptionStats([2, 1], [8, 9])) == pytest.approx(0.15)
    with pytest.raises(ValueError):
        missing_ratio(CorruptionStats([], []))


def test_drop_stats_per_period():
    _, stats = drop_pulses(_uniform_train(100), 0.3, seed=3, period=10)
    assert stats.dropped_per_period.shape == (10,)
    np.testing.assert_array_equal(stats.dropped_per_period + stats.kept_per_period, 10)


# -- add_spurious ----------------------------------------------------------------


def test_spurious_zero_is_identity():
    toa = _uniform_train(30)
    np.testing.assert_array_equal(add_spurious(toa, 0.0, 0.2, seed=1).toas, toa.toas)


def test_spurious_mean_per_gap_monte_carlo():
    toa = _uniform_train(100_001)
    out = add_spurious(toa, 0.4, 0.2, seed=0)
    per_gap = (len(out) - len(toa)) / (len(toa) - 1)
    assert 0.31 <= per_gap <= 0.33


def test_spurious_output_strictly_increasing_and_keeps_real_pulses():
    toa = _uniform_train(200)
    out = add_spurious(toa, 0.8, 0.0, seed=5)
    assert np.all(np.diff(out.toas) > 0)
    assert np.isin(toa.toas, out.toas).all()


def test_spurious_rejects_negative():
    with pytest.raises(ValueError):
        add_spurious(_uniform_train(5), -0.1)


# -- measurement error -------------------------------------------------------------


def test_measurement_error_std_monte_carlo():
    out = add_measurement_error(PriSequence(np.full(100_000, 1000.0)), 0.05, seed=0)
    assert 49 <= out.pris.std() <= 51


def test_measurement_error_zero_is_identity():
    pri = PriSequence([100.0, 200.0])
    assert add_measurement_error(pri, 0.0, seed=0) is pri


@settings(max_examples=25, deadline=None)
@given(rho=st.floats(0, 3), seed=st.integers(0, 2**32 - 1))
def test_measurement_error_stays_positive(rho, seed):
    out = add_measurement_error(PriSequence(np.full(200, 10.0)), rho, seed=seed)
    assert np.all(out.pris > 0)


# -- statistical fidelity of the presets --------------------------------------------


@pytest.mark.parametrize("name", ["train", "p1", "p2", "p3", "p4"])
def test_preset_statistics(name):
    sc = PRESETS[name]
    toa = _uniform_train(100_000)
    kept, stats = drop_pulses(toa, sc.rho_m, seed=11)
    assert abs(missing_ratio(stats) - sc.rho_m) < 0.01
    out = add_spurious(kept, sc.rho_n, sc.rho_m, seed=12)
    per_gap = (len(out) - len(kept)) / (len(kept) - 1)
    assert abs(per_gap - sc.rho_n * (1 - sc.rho_m)) < 0.01


# -- datasets --------------------------------------------------------------------------


def test_fit_length():
    np.testing.assert_array_equal(fit_length(np.array([1.0, 2.0]), 4), [1, 2, 0, 0])
    np.testing.assert_array_equal(fit_length(np.arange(6.0), 3), [0, 1, 2])


def test_make_dataset_cardinality_and_balance():
    ds = make_dataset(default_roster(), P2, 100, 128, seed=0)
    assert ds.x.shape == (1000, 128)
    np.testing.assert_array_equal(ds.class_counts(10), 100)
    assert np.all(ds.x > 0)
    assert np.all(ds.domains == 0)


def test_make_dataset_clean_constant_emitter():
    roster = default_roster()
    ds = make_dataset(roster, ScenarioParams(0, 0, 0), 5, 64, seed=1)
    cst = [s for s in roster if s.modulation == Modulation.CONSTANT][0]
    np.testing.assert_array_equal(ds.x[ds.labels == cst.id], cst.base_pri)


def test_make_dataset_determinism_and_seed_sensitivity():
    a = make_dataset(default_roster(), P3, 3, 32, seed=7)
    b = make_dataset(default_roster(), P3, 3, 32, seed=7)
    c = make_dataset(default_roster(), P3, 3, 32, seed=(7, 1))
    np.testing.assert_array_equal(a.x, b.x)
    assert not np.array_equal(a.x, c.x)


def test_make_dataset_errors():
    with pytest.raises(ValueError):
        make_dataset([], P2, 10)
    with pytest.raises(ValueError):
        make_dataset(default_roster(), P2, 0)


def test_corrupted_stream_length():
    spec = default_roster()[4]
    assert corrupted_stream(spec, P4, 300, seed=0).size == 300


def test_clean_scenario_histogram_centroids_separate_emitters():
    # nearest-centroid classifier on PRI histograms is perfect on clean data
    roster = default_roster()
    edges = np.geomspace(100, 3100, 97)
    train = make_dataset(roster, ScenarioParams(0, 0, 0), 20, 128, seed=0)
    test = make_dataset(roster, ScenarioParams(0, 0, 0), 20, 128, seed=1)

    def hist(x):
        return np.stack([np.histogram(row, edges)[0] for row in x]).astype(float)

    h_train, h_test = hist(train.x), hist(test.x)
    cents = np.stack([h_train[train.labels == c].mean(0) for c in range(10)])
    pred = np.argmin(((h_test[:, None] - cents[None]) ** 2).sum(-1), axis=1)
    assert np.mean(pred == test.labels) == 1.0


def test_dataset_file_round_trip(tmp_path):
    ds = make_dataset(default_roster(), P1, 4, 16, seed=2)
    save_dataset(ds, tmp_path)
    header = (tmp_path / "samples.csv").read_text().splitlines()[0]
    assert header.split(",")[:3] == ["label", "domain_id", "p_0"]
    back = load_dataset(tmp_path)
    np.testing.assert_allclose(back.x, ds.x, rtol=5e-6)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.scenario == ds.scenario
    assert back.roster == ds.roster
    assert back.tail.shape == ds.tail.shape
