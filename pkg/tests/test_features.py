import numpy as np
import pytest
from hypothesis import given, strategies as st

from placeattr.domain import PlaceTable, VisitEvent, VisitLog, eligible_places
from placeattr.features import (
    EmptyFeatureMatrixError,
    FeatureMatrix,
    FeaturizerConfig,
    arrival_features,
    duration_features,
    featurize,
    hour_of_week,
    occupancy_features,
    transition_features,
)
from placeattr.domain import ValidationError

from . import oracles
from .helpers import CATS, events_tuples, random_log, random_places

SUNDAY = 1672531200  # 2023-01-01 00:00 UTC
MONDAY_0930 = SUNDAY + 86400 + 9 * 3600 + 1800


def test_duration_examples():
    cfg = FeaturizerConfig(duration_bin_edges=(30, 60, 90))
    assert duration_features([45, 45, 45], cfg).tolist() == [0, 1, 0, 0]
    assert np.allclose(duration_features([20, 40, 200], cfg), [1 / 3, 1 / 3, 0, 1 / 3], atol=0, rtol=1e-15)
    # edges belong to the bin above them
    assert duration_features([30], cfg).tolist() == [0, 1, 0, 0]


def test_arrival_examples():
    v = arrival_features([MONDAY_0930])
    assert v[33] == 1.0 and v.sum() == 1.0
    v = arrival_features([SUNDAY + 600, SUNDAY + 3000])
    assert v[0] == 1.0


def test_arrival_respects_utc_offset():
    # 23:30 UTC Sunday is 01:30 Monday at UTC+2
    assert arrival_features([SUNDAY + 23.5 * 3600], 2.0)[25] == 1.0
    assert hour_of_week(SUNDAY, -0.5) == 167


def test_occupancy_examples():
    v = occupancy_features([SUNDAY + 1800], [90])
    assert v[0] == 1.0 and v[1] == 1.0 and v.sum() == 2.0
    v = occupancy_features([SUNDAY + 5 * 3600 + 60], [30])
    assert v[5] == 1.0 and v.sum() == 1.0
    # a stay ending exactly on the hour does not touch the next hour
    v = occupancy_features([SUNDAY], [60])
    assert v[0] == 1.0 and v.sum() == 1.0
    # a stay longer than a week counts each hour once
    assert occupancy_features([SUNDAY], [60 * 24 * 9]).tolist() == [1.0] * 168


def _places():
    return PlaceTable(["T", "R", "S"], [0, 1, 2], [0, 0, 0], [0, 0, 0], ["theater", "restaurant", "surf_shop"])


def test_transition_prev_example():
    places = _places()
    log = VisitLog.from_events([VisitEvent("p", "T", 0, 60), VisitEvent("p", "R", 7200, 30)], places)
    cfg = FeaturizerConfig()
    v = transition_features(log, "R", "prev", cfg).reshape(3, 5)
    assert v[0, 0] == 0.0  # theater, 1 h
    assert v[0, 1] == 1.0  # theater, 4 h


def test_transition_next_example():
    places = _places()
    log = VisitLog.from_events([VisitEvent("p", "R", 0, 60), VisitEvent("p", "S", 3600 + 1800, 20)], places)
    v = transition_features(log, "R", "next", FeaturizerConfig()).reshape(3, 5)
    assert v[2, 0] == 1.0
    # the target visit is never its own neighbour
    assert v[1].sum() == 0.0


def test_transition_window_edges_inclusive():
    places = _places()
    # prev: arrival-to-arrival exactly 1 h; next: departure-to-arrival exactly 1 h
    log = VisitLog.from_events(
        [VisitEvent("p", "T", 0, 30), VisitEvent("p", "R", 3600, 30), VisitEvent("p", "S", 3600 + 1800 + 3600, 5)], places
    )
    assert transition_features(log, "R", "prev").reshape(3, 5)[0, 0] == 1.0
    assert transition_features(log, "R", "next").reshape(3, 5)[2, 0] == 1.0


def _assert_matches_oracle(log, places, cfg, atol=1e-12):
    m = featurize(log, places, cfg)
    ev = events_tuples(log)
    counts = oracles.distinct_visitor_counts(ev)
    assert set(m.row_ids) == {p for p, c in counts.items() if c >= cfg.min_visitors}
    dense = m.dense()
    cat_of = {pid: places.category_names[places.category[j]] for j, pid in enumerate(places.ids)}
    n_dur = len(cfg.duration_bin_edges) + 1
    for r, pid in enumerate(m.row_ids):
        mine = [e for e in ev if e[1] == pid]
        row = dense[r]
        assert np.allclose(row[:n_dur], oracles.duration_histogram([e[3] for e in mine], cfg.duration_bin_edges), rtol=0, atol=atol)
        arr = [0.0] * 168
        for e in mine:
            arr[oracles.hour_of_week(e[2], cfg.utc_offset_hours)] += 1 / len(mine)
        assert np.allclose(row[n_dur:n_dur + 168], arr, rtol=0, atol=atol)
        occ = oracles.occupancy([e[2] for e in mine], [e[3] for e in mine], cfg.utc_offset_hours)
        assert np.allclose(row[n_dur + 168:n_dur + 336], occ, rtol=0, atol=atol)
        for direction in ("prev", "next"):
            want = oracles.transition_fractions(ev, cat_of, pid, direction, cfg.transition_windows, places.category_names)
            prefix = "tprev" if direction == "prev" else "tnext"
            for (c, w), val in want.items():
                got = row[m.column_index(f"{prefix}:{c}:{w:g}h")]
                assert abs(got - val) <= atol, (pid, direction, c, w, got, val)
    return m


def test_featurize_matches_oracle_random_log():
    rng = np.random.default_rng(4)
    places = random_places(rng, 25)
    log = random_log(rng, places, 90)
    _assert_matches_oracle(log, places, FeaturizerConfig(min_visitors=3))


def test_featurize_matches_oracle_with_offset_and_custom_bins():
    rng = np.random.default_rng(8)
    places = random_places(rng, 12)
    log = random_log(rng, places, 60)
    cfg = FeaturizerConfig(duration_bin_edges=(5, 50, 500), transition_windows=(0.5, 2, 30), min_visitors=2, utc_offset_hours=5.5)
    _assert_matches_oracle(log, places, cfg)


def test_rows_exactly_eligible_places():
    rng = np.random.default_rng(1)
    places = random_places(rng, 30)
    log = random_log(rng, places, 100)
    for k in (1, 5, 10):
        m = featurize(log, places, FeaturizerConfig(min_visitors=k))
        assert set(m.row_ids) == eligible_places(log, k)


def test_place_with_nine_visitors_absent():
    places = PlaceTable(["A", "B"], [0, 0], [0, 0], [0, 0], ["restaurant"])
    ev = [VisitEvent(f"p{i}", "A", 0, 5) for i in range(9)] + [VisitEvent(f"p{i}", "B", 3600, 5) for i in range(10)]
    m = featurize(VisitLog.from_events(ev, places), places)
    assert m.row_ids == ["B"]


def test_empty_eligible_set_is_an_error():
    places = PlaceTable(["A"], [0], [0], [0], ["restaurant"])
    log = VisitLog.from_events([VisitEvent("p", "A", 0, 5)], places)
    with pytest.raises(EmptyFeatureMatrixError):
        featurize(log, places)


def test_identical_places_get_identical_rows():
    places = PlaceTable(["A", "B", "T"], [0, 0, 1], [0, 0, 0], [0, 0, 0], ["restaurant", "theater"])
    ev = []
    for i in range(12):
        t = 86400.0 * i
        ev += [VisitEvent(f"a{i}", "T", t, 90), VisitEvent(f"a{i}", "A", t + 2 * 3600, 50)]
        ev += [VisitEvent(f"b{i}", "T", t, 90), VisitEvent(f"b{i}", "B", t + 2 * 3600, 50)]
    m = featurize(VisitLog.from_events(ev, places), places)
    d = m.dense()
    assert np.array_equal(d[m.row_ids.index("A")], d[m.row_ids.index("B")])


@given(st.integers(0, 100_000))
def test_group_invariants(seed):
    rng = np.random.default_rng(seed)
    places = random_places(rng, 8)
    log = random_log(rng, places, 20, (1, 10))
    cfg = FeaturizerConfig(min_visitors=1)
    m = featurize(log, places, cfg)
    d = m.dense()
    assert np.all((d >= 0) & (d <= 1 + 1e-12))
    for g in ("duration", "arrival"):
        cols = [m.column_index(c) for c in m.group_columns(g)]
        assert np.allclose(d[:, cols].sum(axis=1), 1.0, atol=1e-9)
    # window nesting
    for prefix in ("tprev", "tnext"):
        for c in places.category_names:
            cols = [m.column_index(f"{prefix}:{c}:{w:g}h") for w in cfg.transition_windows]
            assert np.all(np.diff(d[:, cols], axis=1) >= 0)


@given(st.integers(0, 100_000))
def test_invariant_under_record_order_and_person_relabeling(seed):
    rng = np.random.default_rng(seed)
    places = random_places(rng, 8)
    log = random_log(rng, places, 15, (1, 8))
    ev = log.events
    perm = rng.permutation(len(ev))
    relabel = {p: f"z{rng.integers(1 << 30)}_{i}" for i, p in enumerate(log.person_ids)}
    shuffled = [VisitEvent(relabel[ev[i].person_id], ev[i].place_id, ev[i].arrival, ev[i].duration) for i in perm]
    cfg = FeaturizerConfig(min_visitors=1)
    assert featurize(log, places, cfg) == featurize(VisitLog.from_events(shuffled, places), places, cfg)


def test_sparse_dense_agreement():
    rng = np.random.default_rng(3)
    places = random_places(rng, 10)
    m = featurize(random_log(rng, places, 40), places, FeaturizerConfig(min_visitors=2))
    d = m.dense()
    cols = [m.column_index(c) for c in m.group_columns("occupancy")]
    assert np.array_equal(m.values[:, cols].toarray(), d[:, cols])
    assert m.values.nnz == np.count_nonzero(d)


def test_schema_names():
    rng = np.random.default_rng(0)
    places = random_places(rng, 6)
    m = featurize(random_log(rng, places, 20), places, FeaturizerConfig(min_visitors=1))
    assert m.columns[:9] == ["dur:<15m", "dur:15-30m", "dur:30-45m", "dur:45-60m", "dur:60-90m", "dur:90-120m",
                             "dur:120-180m", "dur:180-240m", "dur:>=240m"]
    assert "arr:Mon09" in m.columns and "occ:Sat23" in m.columns
    assert "tprev:surf_shop:4h" in m.columns and "tnext:home:24h" in m.columns
    assert len(m.columns) == 9 + 168 * 2 + 2 * len(CATS) * 5
    assert len(set(m.columns)) == len(m.columns)


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(12)
    places = random_places(rng, 10)
    m = featurize(random_log(rng, places, 40), places, FeaturizerConfig(min_visitors=2))
    m.save(tmp_path / "f.csv")
    back = FeatureMatrix.load(tmp_path / "f.csv")
    assert back == m
    assert np.array_equal(back.dense(), m.dense())
    assert back.groups == m.groups


def test_config_validation():
    with pytest.raises(ValidationError):
        FeaturizerConfig(duration_bin_edges=(30, 30))
    with pytest.raises(ValidationError):
        FeaturizerConfig(transition_windows=(4, 1))
    with pytest.raises(ValidationError):
        FeaturizerConfig(transition_windows=(0, 1))
