import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.model_selection import StratifiedKFold, cross_val_predict
from sklearn.neighbors import KNeighborsClassifier

from modal_transfer.errors import (InfeasibleCandidateError, InvalidConfigError, NoFeasibleSubsetError)
from modal_transfer.population import LabeledDataset, TransferTask
from modal_transfer.similarity import mac_matrix
from modal_transfer.spectral import ModalModel
from modal_transfer.tfc import (HyperGrid, SearchPolicy, SourceLoss, TfcConfig, multitask_grid_search,
                                select_features, source_loss_for, tfc_objective)


def brute_force_select(M, loss, D, lam):
    """Independent re-enumeration: first maximiser in lexicographic order wins."""
    best, best_score = None, -np.inf
    for vs in combinations(range(M.shape[0]), D):
        vt = [max(range(M.shape[1]), key=lambda j: (M[i, j], -j)) for i in vs]
        if len(set(vt)) < len(vt):
            continue
        score = -loss(vs) + lam * float(np.mean([M[i, j] for i, j in zip(vs, vt)]))
        if score > best_score:
            best, best_score = (tuple(vs), tuple(vt)), score
    return best, best_score


class TableLoss:
    def __init__(self, seed, d):
        self.rng = np.random.default_rng(seed)
        self.table = {}

    def __call__(self, subset):
        key = tuple(subset)
        if key not in self.table:
            # coarse values so ties occur and the tie-break is exercised
            self.table[key] = float(self.rng.integers(0, 5)) / 10
        return self.table[key]


def toy_task(d=3, n=40, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(2), n // 2)
    X = rng.normal(size=(n, d)) + y[:, None] * np.array([12.0] + [0.0] * (d - 1))
    train = np.tile(np.arange(n // 2) % 2 == 0, 2)
    ds = LabeledDataset(X, y, y == 0, train)
    shapes = np.linalg.qr(rng.normal(size=(d + 2, d)))[0]
    modal = ModalModel(np.arange(1.0, d + 1), shapes)
    return TransferTask(ds, ds, modal, modal)


# ---------------------------------------------------------------- source loss

def test_source_loss_matches_sklearn_cross_validation():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(60, 4)) + np.repeat(np.arange(3), 20)[:, None] * [1.5, 0, 0.7, 0]
    y = np.repeat(np.arange(3), 20)
    loss = SourceLoss(X, y, folds=5)
    for subset in [(0,), (1, 3), (0, 2), (0, 1, 2, 3)]:
        pred = cross_val_predict(KNeighborsClassifier(1), X[:, subset], y, cv=StratifiedKFold(5))
        assert loss(subset) == pytest.approx(np.mean(pred != y), abs=1e-12)


def test_source_loss_groups_and_cache():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(30, 4))
    y = np.repeat([0, 1], 15)
    grouped = SourceLoss(X, y, groups=[[0, 1], [2, 3]])
    flat = SourceLoss(X, y)
    assert grouped((0,)) == flat((0, 1))
    assert grouped((0, 1)) == flat((0, 1, 2, 3))
    assert (0,) in grouped._cache


def test_source_loss_folds_capped_by_class_size():
    X = np.arange(6.0)[:, None]
    y = np.array([0, 0, 0, 1, 1, 1])
    assert SourceLoss(X, y, folds=5).folds == 3


# ---------------------------------------------------------------- objective

def test_objective_lambda_zero_is_negative_loss():
    task = toy_task()
    loss = source_loss_for(task)
    assert tfc_objective(task, [0, 1], [0, 1], 0.0, loss) == -loss((0, 1))


def test_objective_identical_structures_perfect_source():
    task = toy_task(seed=3)
    loss = source_loss_for(task)
    assert loss((0,)) == 0.0
    assert tfc_objective(task, [0], [0], 0.7, loss) == pytest.approx(0.7, abs=1e-12)


def test_objective_three_feature_oracle():
    task = toy_task()
    M = np.array([[1.0, 0.2, 0.1], [0.3, 0.6, 0.0], [0.0, 0.4, 0.9]])
    loss = source_loss_for(task)
    expected = -loss((0, 2)) + 0.5 * (1.0 + 0.4) / 2
    assert tfc_objective(task, [0, 2], [0, 1], 0.5, loss, mac=M) == pytest.approx(expected, abs=1e-12)


def test_objective_rejects_duplicates():
    task = toy_task()
    with pytest.raises(InfeasibleCandidateError):
        tfc_objective(task, [0, 1], [1, 1], 0.1, source_loss_for(task))


# ---------------------------------------------------------------- exhaustive search

@given(st.integers(2, 10), st.data(), st.integers(0, 10_000), st.sampled_from([0.0, 0.01, 0.1, 1.0, 10.0]))
def test_select_features_matches_brute_force(d, data, seed, lam):
    D = data.draw(st.integers(1, d))
    assert math.comb(d, D) <= 252
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(6, d)), rng.normal(size=(6, d))
    M = mac_matrix(A, B)
    loss = TableLoss(seed, d)
    expected, expected_score = brute_force_select(M, loss, D, lam)
    if expected is None:
        with pytest.raises(NoFeasibleSubsetError):
            select_features(None, TfcConfig(D=D, lam=lam), loss=loss, mac=M)
        return
    sel = select_features(None, TfcConfig(D=D, lam=lam), loss=loss, mac=M)
    assert (sel.source_indices, sel.target_indices) == expected
    assert sel.score == pytest.approx(expected_score, abs=1e-12)
    assert len(set(sel.target_indices)) == D


def test_select_features_matches_brute_force_on_population_tasks(small_tasks):
    for task in small_tasks[:4]:
        M = mac_matrix(task.source_modal, task.target_modal)
        loss = source_loss_for(task)
        for D in (2, 5, 8):
            sel = select_features(task, TfcConfig(D=D, lam=0.1), loss=loss)
            expected, _ = brute_force_select(M, loss, D, 0.1)
            assert (sel.source_indices, sel.target_indices) == expected


def test_all_features_selected_when_D_equals_d():
    M = np.eye(4) * 0.8 + 0.05
    sel = select_features(None, TfcConfig(D=4, lam=0.1), loss=lambda s: 0.0, mac=M)
    assert sel.source_indices == (0, 1, 2, 3) and sel.n_feasible == 1


def test_discriminative_and_similar_pair_selected():
    rng = np.random.default_rng(0)
    n, d = 60, 6
    y = np.repeat([0, 1, 2], n // 3)
    X = rng.normal(size=(n, d))
    X[:, 4] += 4 * (y == 1)
    X[:, 5] += 4 * (y == 2)
    M = np.full((d, d), 0.2)
    np.fill_diagonal(M, 0.5)
    M[4, 4] = M[5, 5] = 0.95
    sel = select_features(None, TfcConfig(D=2, lam=0.1), loss=SourceLoss(X, y), mac=M)
    assert sel.source_indices == (4, 5)


def test_lambda_extremes():
    rng = np.random.default_rng(5)
    M = mac_matrix(rng.normal(size=(6, 6)), rng.normal(size=(6, 6)))
    loss = TableLoss(5, 6)
    feasible = [s for s in combinations(range(6), 3)
                if len(set(M[list(s)].argmax(axis=1))) == 3]
    big = select_features(None, TfcConfig(D=3, lam=1e6), loss=loss, mac=M)
    assert big.mac_discrepancy == pytest.approx(max(M[list(s)].max(axis=1).mean() for s in feasible))
    small = select_features(None, TfcConfig(D=3, lam=0.0), loss=loss, mac=M)
    assert small.source_loss == min(loss(s) for s in feasible)


def test_no_feasible_subset():
    M = np.array([[0.9, 0.1], [0.8, 0.2]])
    with pytest.raises(NoFeasibleSubsetError):
        select_features(None, TfcConfig(D=2), loss=lambda s: 0.0, mac=M)


def test_search_budget_and_config_validation():
    with pytest.raises(InvalidConfigError):
        select_features(None, TfcConfig(D=10, max_candidates=10), loss=lambda s: 0.0,
                        mac=np.eye(20))
    with pytest.raises(InvalidConfigError):
        select_features(None, TfcConfig(D=5), loss=lambda s: 0.0, mac=np.eye(3))
    with pytest.raises(InvalidConfigError):
        TfcConfig(D=0)
    with pytest.raises(InvalidConfigError):
        TfcConfig(lam=-1)
    with pytest.raises(InvalidConfigError):
        SearchPolicy(duplicate_handling="penalty")


def test_selection_deterministic(small_tasks):
    task = small_tasks[0]
    a = select_features(task, TfcConfig(D=4, lam=0.1))
    b = select_features(task, TfcConfig(D=4, lam=0.1))
    assert a == b


def test_columns_expand_groups():
    M = np.eye(3)
    sel = select_features(None, TfcConfig(D=2, lam=1.0), loss=lambda s: 0.0, mac=M)
    cs, ct = sel.columns([[0, 1], [2, 3], [4, 5]], [[0], [1], [2]])
    assert cs.tolist() == [0, 1, 2, 3] and ct.tolist() == [0, 1]


# ---------------------------------------------------------------- grid search

class FakeTask:
    def __init__(self, name, n_test=10):
        self.task_id = name
        self.target = LabeledDataset(np.zeros((2 * n_test, 1)), np.zeros(2 * n_test), np.ones(2 * n_test),
                                     np.arange(2 * n_test) < n_test)


def test_grid_single_point():
    grid = HyperGrid((0.5,), (3,), (FakeTask("a"),))
    assert multitask_grid_search(grid, lambda t, D, lam: (7, 10)).best == (3, 0.5)


def test_grid_dominant_point():
    grid = HyperGrid((0.1, 1.0), (2,), (FakeTask("a"), FakeTask("b")))
    res = multitask_grid_search(grid, lambda t, D, lam: (1 if lam == 1.0 else 4, 10))
    assert res.best == (2, 1.0) and res.losses[(2, 0.1)] == 8 and res.losses[(2, 1.0)] == 2


def test_grid_tie_break_smaller_D_then_lambda():
    grid = HyperGrid((1.0, 0.1), (5, 3), (FakeTask("a"),))
    res = multitask_grid_search(grid, lambda t, D, lam: (2, 10))
    assert (res.D, res.lam) == (3, 0.1)


def test_grid_failure_charged_worst_case():
    grid = HyperGrid((0.1,), (2, 3), (FakeTask("a", n_test=10), FakeTask("b", n_test=10)))

    def pipeline(task, D, lam):
        if D == 2 and task.task_id == "b":
            raise NoFeasibleSubsetError("collide")
        return (3, 10)

    res = multitask_grid_search(grid, pipeline)
    assert res.losses[(2, 0.1)] == 13 and res.best == (3, 0.1)
    assert "b: collide" in res.failures[(2, 0.1)][0]


def test_grid_validation():
    with pytest.raises(InvalidConfigError):
        HyperGrid((), (2,))
    with pytest.raises(InvalidConfigError):
        multitask_grid_search(HyperGrid((0.1,), (2,), ()), lambda *a: (0, 1))
