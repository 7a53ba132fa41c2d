
from placeattr.domain import PlaceTable, VisitLog

CATS = ["home", "work", "restaurant", "theater", "park", "surf_shop"]


def random_places(rng, n_places, categories=CATS, extent=6.0) -> PlaceTable:
    return PlaceTable(
        [f"P{j:03d}" for j in range(n_places)],
        rng.integers(0, len(categories), n_places),
        rng.uniform(0, extent, n_places),
        rng.uniform(0, extent, n_places),
        categories,
    )


def random_log(rng, places: PlaceTable, n_people, visits_per_person=(3, 30), start=1_700_000_000) -> VisitLog:
    """Non-overlapping random trajectories with gaps spread over 0..30 h."""
    person, place, arrival, duration = [], [], [], []
    for p in range(n_people):
        t = float(start + rng.integers(0, 7 * 86400))
        for _ in range(int(rng.integers(*visits_per_person))):
            d = float(rng.choice([rng.integers(1, 400), rng.uniform(0.5, 300.0)]))
            person.append(p)
            place.append(int(rng.integers(0, len(places))))
            arrival.append(t)
            duration.append(d)
            gap = rng.choice([0.0, rng.uniform(0, 3600), rng.uniform(0, 30 * 3600), 3600.0, 4 * 3600.0])
            t = t + d * 60.0 + float(gap)
    ids = [f"u{p:04d}" for p in range(n_people)]
    return VisitLog(person, place, arrival, duration, ids, places)


def events_tuples(log: VisitLog):
    return [(e.person_id, e.place_id, e.arrival, e.duration) for e in log]
