import numpy as np
import pytest

from placeattr.domain import PlaceTable, ValidationError, VisitEvent, VisitLog
from placeattr.embedder import (
    CovisitMatrix,
    EmbeddingFactors,
    SingularSystemError,
    build_covisit_matrix,
    place_embedding_features,
    reported_objective,
    solve_place_factors,
    wals_factorize,
    wals_objective,
)

from . import oracles
from .helpers import events_tuples, random_log, random_places


def _visits(person, place, n, start=0.0):
    return [VisitEvent(person, place, start + k * 7200.0, 30) for k in range(n)]


def test_weight_divisor_floor():
    places = PlaceTable(["A", "B"], [0, 0], [0.0, 50.0], [0.0, 0.0], ["cafe"])
    log = VisitLog.from_events(_visits("p", "A", 3) + _visits("p", "B", 1, 1e6), places)
    m = build_covisit_matrix(log, cap=10)
    assert m.dense_weights()[0, 0] == 3.0


def test_weight_cap_then_divide():
    places = PlaceTable(["A", "B", "C", "D"], [0] * 4, [0.0, 1.0, 0.0, 9.0], [0.0, 0.0, 1.5, 0.0], ["cafe"])
    ev = _visits("p", "A", 15) + _visits("p", "B", 1, 1e6) + _visits("p", "C", 2, 2e6) + _visits("p", "D", 1, 3e6)
    m = build_covisit_matrix(VisitLog.from_events(ev, places), cap=10, radius_km=2.0)
    w = m.dense_weights()
    assert w[0, 0] == 5.0
    assert w[0, 3] == 1.0  # D is far from everything
    assert m.L.toarray()[0].tolist() == [1, 1, 1, 1]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_weights_match_all_pairs_scan(seed):
    rng = np.random.default_rng(seed)
    places = random_places(rng, 40, extent=5.0)
    log = random_log(rng, places, 60, (2, 40))
    m = build_covisit_matrix(log, cap=4, radius_km=1.5)
    coords = {pid: (places.x[j], places.y[j]) for j, pid in enumerate(places.ids)}
    want = oracles.covisit_weights(events_tuples(log), coords, cap=4, radius_km=1.5)
    w = m.dense_weights()
    L = m.L.toarray()
    got = {}
    for i, person in enumerate(m.person_ids):
        for j, place in enumerate(m.place_ids):
            if L[i, j]:
                got[person, place] = w[i, j]
    assert got.keys() == want.keys()
    for k, v in want.items():
        assert abs(got[k] - v) <= 1e-12


def test_from_dense_keeps_observed_zero_indicator():
    L = np.array([[1.0, 0.0], [0.0, 1.0]])
    W = np.array([[2.0, 0.5], [0.0, 1.0]])
    m = CovisitMatrix.from_dense(L, W)
    assert m.W.nnz == 3
    assert np.array_equal(m.dense_weights(), W)
    assert np.array_equal(m.L.toarray(), L)


def test_one_by_one_closed_form():
    m = CovisitMatrix.from_dense([[1.0]], [[1.0]])
    V = solve_place_factors(m, np.array([[1.0]]), lam=0.0)
    assert V.tolist() == [[1.0]]
    assert wals_objective(m, np.array([[1.0]]), V, 0.0) == 0.0


def test_rank_one_exact():
    rng = np.random.default_rng(0)
    u, v = rng.uniform(0.5, 1.5, 12), rng.uniform(0.5, 1.5, 9)
    m = CovisitMatrix.from_dense(np.outer(u, v), np.ones((12, 9)))
    f = wals_factorize(m, rank=1, lam=0.0, max_sweeps=50, tol=1e-15, seed=3)
    assert f.final_loss < 1e-8


def test_rank_three_recovery_within_fifty_sweeps():
    rng = np.random.default_rng(7)
    L = rng.normal(size=(40, 3)) @ rng.normal(size=(3, 30))
    m = CovisitMatrix.from_dense(L, np.ones_like(L))
    f = wals_factorize(m, rank=3, lam=0.0, max_sweeps=50, tol=1e-15, seed=0)
    assert len(f.sweep_losses) <= 50
    assert f.final_loss <= 1e-6


def _random_instance(rng, n=20, p=15, density=0.4, w0=0.01):
    mask = rng.random((n, p)) < density
    L = mask.astype(float)
    W = np.where(mask, rng.uniform(0.2, 5.0, (n, p)), 0.0)
    return CovisitMatrix.from_dense(L, W, unobserved_weight=w0)


@pytest.mark.parametrize("seed", range(5))
def test_recorded_objective_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    m = _random_instance(rng)
    f = wals_factorize(m, rank=3, lam=0.1, max_sweeps=15, tol=1e-12, seed=seed)
    Wd = m.dense_weights()
    Wd[Wd == 0] = m.unobserved_weight
    Ld = m.L.toarray()
    assert abs(f.final_loss - oracles.wals_loss(Ld, Wd, f.U, f.V, 0.1)) <= 1e-9
    assert abs(reported_objective(m, f.U, f.V, 0.1) - oracles.wals_loss(Ld, Wd, f.U, f.V, 0.1, squared=False)) <= 1e-9
    # replay sweep by sweep from the same init
    rng_init = np.random.default_rng(100 + seed)
    U0, V0 = rng_init.uniform(-1, 1, (20, 3)), rng_init.uniform(-1, 1, (15, 3))
    prev = oracles.wals_loss(Ld, Wd, U0, V0, 0.1)
    U, V = U0, V0
    for _ in range(8):
        g = wals_factorize(m, rank=3, lam=0.1, max_sweeps=1, tol=1e-12, init=(U, V))
        U, V = g.U, g.V
        now = oracles.wals_loss(Ld, Wd, U, V, 0.1)
        assert abs(g.sweep_losses[0] - now) <= 1e-9
        assert now <= prev + 1e-9
        prev = now


def test_sweep_losses_non_increasing():
    rng = np.random.default_rng(11)
    m = _random_instance(rng, 50, 40, 0.2)
    f = wals_factorize(m, rank=5, lam=0.1, max_sweeps=30, tol=1e-12)
    assert np.all(np.diff(f.sweep_losses) <= 1e-9)
    assert f.sweep_losses[0] <= f.initial_loss


def test_scale_symmetry_of_reconstruction():
    rng = np.random.default_rng(2)
    m = _random_instance(rng)
    U, V = rng.normal(size=(20, 4)), rng.normal(size=(15, 4))
    D = np.diag(rng.uniform(0.2, 5.0, 4))
    a = wals_objective(m, U, V, 0.0)
    b = wals_objective(m, U @ D, V @ np.linalg.inv(D), 0.0)
    assert abs(a - b) <= 1e-9 * max(1.0, a)


def test_singular_system_at_zero_lambda():
    # the second place is never visited and there is no unobserved weight
    m = CovisitMatrix.from_dense([[1.0, 0.0]], [[1.0, 0.0]], unobserved_weight=0.0)
    with pytest.raises(SingularSystemError, match="lam"):
        wals_factorize(m, rank=1, lam=0.0)
    wals_factorize(m, rank=1, lam=0.1)


def test_argument_validation():
    m = CovisitMatrix.from_dense([[1.0]], [[1.0]])
    for kw in ({"rank": 0}, {"lam": -1.0}, {"tol": 0.0}):
        with pytest.raises(ValidationError):
            wals_factorize(m, **kw)


def test_deterministic_across_runs_and_workers():
    rng = np.random.default_rng(5)
    places = random_places(rng, 60)
    log = random_log(rng, places, 200)
    m = build_covisit_matrix(log)
    a = wals_factorize(m, rank=8, seed=42, max_sweeps=5)
    b = wals_factorize(m, rank=8, seed=42, max_sweeps=5, workers=8)
    c = wals_factorize(m, rank=8, seed=42, max_sweeps=5)
    assert a.U.tobytes() == b.U.tobytes() == c.U.tobytes()
    assert a.V.tobytes() == b.V.tobytes() == c.V.tobytes()
    assert a.sweep_losses == b.sweep_losses
    d = wals_factorize(m, rank=8, seed=43, max_sweeps=5)
    assert not np.array_equal(a.V, d.V)


def test_place_features_shape_and_identity():
    rng = np.random.default_rng(1)
    m = _random_instance(rng)
    f = wals_factorize(m, rank=4, max_sweeps=3)
    fm = place_embedding_features(f)
    assert fm.values.shape == (15, 4)
    assert fm.columns == ["emb:0", "emb:1", "emb:2", "emb:3"]
    assert set(fm.groups) == {"embedding"}
    d = fm.dense()
    for j in range(15):
        assert d[j].tobytes() == f.V[j].tobytes()
    assert fm.row_ids == m.place_ids


def test_factors_save_and_load(tmp_path):
    rng = np.random.default_rng(3)
    f = wals_factorize(_random_instance(rng), rank=2, max_sweeps=2)
    f.save(tmp_path)
    V, ids = EmbeddingFactors.load_places(tmp_path)
    assert V.tobytes() == f.V.tobytes() and ids == f.place_ids
