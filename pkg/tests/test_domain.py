import numpy as np
import pytest
from hypothesis import given, strategies as st

from placeattr.domain import (
    DegenerateLabelsError,
    LabelTable,
    PlaceTable,
    ValidationError,
    VisitEvent,
    VisitLog,
    distinct_visitors,
    eligible_places,
    load_labels,
    load_places,
    load_visit_log,
    write_labels,
    write_places,
    write_visit_log,
)

from .helpers import events_tuples, random_log, random_places
from .oracles import distinct_visitor_counts


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


@pytest.fixture
def places_ab(tmp_path):
    return load_places(_write(tmp_path, "places.csv", "place_id,category_name,x_km,y_km\nA,restaurant,0,0\nB,park,1.5,2\n"))


def test_load_two_visits_sorted(tmp_path, places_ab):
    p = _write(tmp_path, "v.csv", "person_id,place_id,arrival_unix_seconds,duration_minutes\np1,A,0,30\np1,B,3600,45\n")
    log = load_visit_log(p, places_ab)
    assert [(e.place_id, e.arrival) for e in log] == [("A", 0.0), ("B", 3600.0)]


def test_reversed_rows_give_identical_log(tmp_path, places_ab):
    a = _write(tmp_path, "a.csv", "person_id,place_id,arrival_unix_seconds,duration_minutes\np1,A,0,30\np1,B,3600,45\n")
    b = _write(tmp_path, "b.csv", "person_id,place_id,arrival_unix_seconds,duration_minutes\np1,B,3600,45\np1,A,0,30\n")
    assert load_visit_log(a, places_ab) == load_visit_log(b, places_ab)


def test_zero_duration_reports_line(tmp_path, places_ab):
    p = _write(tmp_path, "v.csv", "person_id,place_id,arrival_unix_seconds,duration_minutes\np1,A,0,30\np1,B,3600,0\n")
    with pytest.raises(ValidationError, match="nonpositive duration at line 3"):
        load_visit_log(p, places_ab)


def test_unknown_place_and_malformed(tmp_path, places_ab):
    p = _write(tmp_path, "v.csv", "person_id,place_id,arrival_unix_seconds,duration_minutes\np1,Z,0,30\n")
    with pytest.raises(ValidationError, match="unknown place_id 'Z' at line 2"):
        load_visit_log(p, places_ab)
    p = _write(tmp_path, "w.csv", "person_id,place_id,arrival_unix_seconds,duration_minutes\np1,A,0\n")
    with pytest.raises(ValidationError, match="malformed record at line 2"):
        load_visit_log(p, places_ab)
    p = _write(tmp_path, "x.csv", "person_id,place_id,arrival_unix_seconds,duration_minutes\np1,A,soon,5\n")
    with pytest.raises(ValidationError, match="line 2"):
        load_visit_log(p, places_ab)


def test_overlap_is_an_error(tmp_path, places_ab):
    p = _write(tmp_path, "v.csv", "person_id,place_id,arrival_unix_seconds,duration_minutes\np1,A,0,30\np1,B,1000,10\n")
    with pytest.raises(ValidationError, match="overlapping visits for person 'p1' at lines 2 and 3"):
        load_visit_log(p, places_ab)


def test_back_to_back_visits_allowed(places_ab):
    log = VisitLog.from_events([VisitEvent("p", "A", 0, 30), VisitEvent("p", "B", 1800, 5)], places_ab)
    assert len(log) == 2


def test_places_loading(tmp_path):
    p = _write(tmp_path, "p.csv", "place_id,category_name,x_km,y_km\na,cafe,0,0\nb,bar,1,1\nc,cafe,2,2\n")
    t = load_places(p)
    assert len(t) == 3 and t.category_names == ["cafe", "bar"]
    p = _write(tmp_path, "d.csv", "place_id,category_name,x_km,y_km\na,cafe,0,0\na,bar,1,1\n")
    with pytest.raises(ValidationError, match="duplicate place_id 'a'"):
        load_places(p)
    p = _write(tmp_path, "n.csv", "place_id,category_name,x_km,y_km\na,cafe,nan,0\n")
    with pytest.raises(ValidationError, match="non-finite"):
        load_places(p)


def test_labels_loading(tmp_path, places_ab):
    p = _write(tmp_path, "l.csv", "attribute_name,place_id,label\nromantic,A,1\nwifi,A,0\nromantic,B,0\nwifi,B,1\n")
    tables = load_labels(p, places_ab)
    assert [t.attribute_name for t in tables] == ["romantic", "wifi"]
    assert tables[0].entries == {"A": True, "B": False}
    p = _write(tmp_path, "c.csv", "attribute_name,place_id,label\nromantic,A,1\nromantic,A,0\n")
    with pytest.raises(ValidationError, match="conflicting labels"):
        load_labels(p)
    # a repeated identical label is harmless
    p = _write(tmp_path, "r.csv", "attribute_name,place_id,label\nromantic,A,1\nromantic,A,1\n")
    assert load_labels(p)[0].entries == {"A": True}
    p = _write(tmp_path, "u.csv", "attribute_name,place_id,label\nromantic,Q,1\n")
    with pytest.raises(ValidationError, match="unknown place_id 'Q'"):
        load_labels(p, places_ab)


def test_header_required(tmp_path, places_ab):
    p = _write(tmp_path, "v.csv", "p1,A,0,30\n")
    with pytest.raises(ValidationError, match="expected header"):
        load_visit_log(p, places_ab)


def test_check_trainable():
    with pytest.raises(DegenerateLabelsError):
        LabelTable("x", {"a": True}).check_trainable()
    LabelTable("x", {"a": True, "b": False}).check_trainable()


def test_eligibility_examples():
    places = PlaceTable(["A", "B"], [0, 0], [0, 1], [0, 1], ["restaurant"])
    ev = [VisitEvent(f"p{i % 3}", "A", i * 7200.0, 10) for i in range(12)]
    ev += [VisitEvent(f"q{i}", "B", i * 7200.0, 10) for i in range(10)]
    log = VisitLog.from_events(ev, places)
    assert eligible_places(log, 10) == {"B"}
    assert eligible_places(log, 3) == {"A", "B"}


def test_eligibility_matches_hash_set_count():
    rng = np.random.default_rng(5)
    places = random_places(rng, 40)
    log = random_log(rng, places, 120)
    counts = distinct_visitor_counts(events_tuples(log))
    for m in (1, 3, 5, 10):
        assert eligible_places(log, m) == {p for p, c in counts.items() if c >= m}
    assert distinct_visitors(log).sum() == sum(counts.values())


@given(st.integers(0, 10_000), st.integers(1, 15), st.integers(1, 15))
def test_eligibility_monotone(seed, a, b):
    rng = np.random.default_rng(seed)
    log = random_log(rng, random_places(rng, 10), 25, (1, 6))
    lo, hi = min(a, b), max(a, b)
    assert eligible_places(log, hi) <= eligible_places(log, lo)


def test_log_is_sorted_and_non_overlapping():
    rng = np.random.default_rng(2)
    log = random_log(rng, random_places(rng, 20), 50)
    ev = log.events
    for a, b in zip(ev, ev[1:]):
        assert (a.person_id, a.arrival) <= (b.person_id, b.arrival)
        if a.person_id == b.person_id:
            assert b.arrival >= a.arrival + a.duration * 60


def test_round_trip_is_idempotent(tmp_path):
    rng = np.random.default_rng(9)
    places = random_places(rng, 15)
    log = random_log(rng, places, 30)
    labels = [LabelTable("x", {"P000": True, "P001": False})]
    write_places(places, tmp_path / "p.csv")
    write_visit_log(log, tmp_path / "v.csv")
    write_labels(labels, tmp_path / "l.csv")
    p1 = load_places(tmp_path / "p.csv")
    p2 = load_places(tmp_path / "p.csv")
    assert p1 == p2
    l1, l2 = load_visit_log(tmp_path / "v.csv", p1), load_visit_log(tmp_path / "v.csv", p2)
    assert l1 == l2
    assert [(e.person_id, e.place_id, e.arrival, e.duration) for e in l1] == events_tuples(log)
    assert load_labels(tmp_path / "l.csv") == labels


def test_objects_are_read_only():
    rng = np.random.default_rng(0)
    log = random_log(rng, random_places(rng, 5), 3)
    with pytest.raises(ValueError):
        log.arrival[0] = 1.0
