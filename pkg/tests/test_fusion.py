import warnings

import numpy as np
import pytest

from gatspoof.fusion import (
    AlignmentError, FusionModel, align, fit_svm, fuse, fuse_sets, primal_objective, smo_linear_svm,
)
from gatspoof.metrics import ScoreSet, eer, read_scores, write_scores


def complementary_sets(rng, n_bona=60, n_spoof=60):
    """Two systems, each perfect on one attack and blind to the other."""
    ids = [f"T{i:04d}" for i in range(n_bona + n_spoof)]
    is_bona = np.arange(n_bona + n_spoof) < n_bona
    attacks = ["-"] * n_bona + ["A01" if i % 2 == 0 else "A02" for i in range(n_spoof)]
    a01 = np.array([a == "A01" for a in attacks])
    a02 = np.array([a == "A02" for a in attacks])
    s1 = rng.normal(2.0, 0.5, is_bona.size)
    s1[a01] = rng.normal(-2.0, 0.5, a01.sum())
    s2 = rng.normal(2.0, 0.5, is_bona.size)
    s2[a02] = rng.normal(-2.0, 0.5, a02.sum())
    return [ScoreSet(ids, s, is_bona, attacks) for s in (s1, s2)]


def ranks(x):
    return np.argsort(np.argsort(x, kind="mergesort"), kind="mergesort")


def same_order(a, b, tie=1e-9):
    """Every pair strictly ordered in ``a`` (beyond ``tie``) keeps its order in ``b``."""
    before = a[:, None] < a[None, :] - tie
    return bool(np.all((b[:, None] < b[None, :])[before]))


def qp_oracle(Z, y, C):
    cp = pytest.importorskip("cvxpy")
    w = cp.Variable(Z.shape[1])
    b = cp.Variable()
    obj = 0.5 * cp.sum_squares(w) + C * cp.sum(cp.pos(1 - cp.multiply(y, Z @ w + b)))
    prob = cp.Problem(cp.Minimize(obj))
    prob.solve()
    return w.value, b.value, prob.value


def test_smo_matches_qp_oracle(rng):
    X = rng.standard_normal((80, 3))
    y = np.where(X @ [1.0, -0.5, 0.2] + 0.3 * rng.standard_normal(80) > 0, 1.0, -1.0)
    w, b, alpha, _ = smo_linear_svm(X, y, C=1.0, tol=1e-8)
    w_ref, _, obj_ref = qp_oracle(X, y, 1.0)
    obj = 0.5 * w @ w + np.maximum(0, 1 - y * (X @ w + b)).sum()
    assert obj == pytest.approx(obj_ref, rel=1e-5)
    np.testing.assert_allclose(w, w_ref, atol=1e-3)
    assert np.all((alpha >= 0) & (alpha <= 1.0))
    assert abs(alpha @ y) < 1e-9


def test_fit_objective_matches_oracle(rng):
    X = rng.standard_normal((60, 2)) * [3.0, 0.1] + [10.0, -4.0]
    labels = (X[:, 0] - 10.0) + 20 * (X[:, 1] + 4.0) + rng.standard_normal(60) > 0
    model = fit_svm(X, labels)
    Z = (X - X.mean(0)) / X.std(0)
    _, _, obj_ref = qp_oracle(Z, np.where(labels, 1.0, -1.0), 1.0)
    assert primal_objective(model, X, np.where(labels, 1, -1)) == pytest.approx(obj_ref, rel=1e-5)


def test_separable_toy():
    X = np.array([[2.0, 1.0], [3.0, 2.5], [2.5, 3.0], [-1.0, -2.0], [-2.0, -1.5], [-3.0, -2.5]])
    y = np.array([1, 1, 1, -1, -1, -1])
    model = fit_svm(X, y, C=100.0)
    margins = y * fuse(model, X)
    assert np.all(margins > 0)
    assert np.maximum(0, 1 - margins).sum() == pytest.approx(0.0, abs=1e-6)


def test_noise_column_gets_small_weight(rng):
    n = 500
    labels = rng.random(n) < 0.5
    info = np.where(labels, 1.0, -1.0) + 0.8 * rng.standard_normal(n)
    X = np.column_stack([info, rng.standard_normal(n)])
    model = fit_svm(X, labels)
    assert abs(model.weights[1]) < abs(model.weights[0])


def test_duplicate_system_keeps_ranking(rng):
    n = 200
    labels = rng.random(n) < 0.5
    s = np.where(labels, 1.0, -1.0) + rng.standard_normal(n)
    one = fit_svm(np.column_stack([s, rng.standard_normal(n)]), labels)
    dup = fit_svm(np.column_stack([s, s]), labels)
    fused = fuse(dup, np.column_stack([s, s]))
    assert np.corrcoef(ranks(fused), ranks(s))[0, 1] == pytest.approx(1.0)
    assert one.k == 2


def test_affine_rescaling_keeps_ranking(rng):
    sets = complementary_sets(rng)
    al = align(sets)
    base = fuse(fit_svm(al.X, al.is_bonafide), al.X)
    X2 = al.X * [5.0, 0.01] + [-3.0, 100.0]
    again = fuse(fit_svm(X2, al.is_bonafide), X2)
    # margin support vectors tie exactly at +/-1, so only roundoff orders them
    np.testing.assert_allclose(again, base, atol=1e-9)
    assert same_order(base, again) and same_order(again, base)


def test_complementary_systems_improve(rng):
    sets = complementary_sets(rng)
    al = align(sets)
    model = fit_svm(al.X, al.is_bonafide, names=("s1", "s2"))
    fused = fuse_sets(model, al)
    assert eer(fused) <= min(eer(s) for s in sets)
    assert fused.attack_ids == al.attack_ids


def test_degenerate_models():
    ident = FusionModel([1.0], 0.0, [0.0], [1.0])
    x = np.array([[0.3], [-2.0], [5.0]])
    np.testing.assert_array_equal(fuse(ident, x), x[:, 0])
    e1 = FusionModel([1.0, 0.0, 0.0], 0.0, [0, 0, 0], [1, 1, 1])
    X = np.random.default_rng(0).standard_normal((20, 3))
    np.testing.assert_array_equal(ranks(fuse(e1, X)), ranks(X[:, 0]))
    with pytest.raises(ValueError):
        fuse(e1, X[:, :2])


def test_fit_errors(rng):
    X = rng.standard_normal((10, 2))
    with pytest.raises(ValueError):
        fit_svm(X, np.ones(10, dtype=bool))
    with pytest.raises(ValueError):
        fit_svm(X[:, :1], np.arange(10) < 5)
    with pytest.raises(ValueError, match="constant"):
        fit_svm(np.column_stack([X[:, 0], np.ones(10)]), np.arange(10) < 5)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit_svm(X[:2], np.array([True, False]))
    assert any("trials" in str(w.message) for w in caught)


def test_fit_deterministic(rng):
    X = rng.standard_normal((50, 3))
    y = rng.random(50) < 0.5
    assert fit_svm(X, y).to_text() == fit_svm(X, y).to_text()


def test_align_examples(rng):
    a, b = complementary_sets(rng, 5, 5)
    al = align([a, a])
    np.testing.assert_array_equal(al.X[:, 0], al.X[:, 1])
    perm = rng.permutation(10)
    shuffled = ScoreSet([b.utt_ids[i] for i in perm], b.scores[perm], b.is_bonafide[perm],
                        [b.attack_ids[i] for i in perm])
    np.testing.assert_array_equal(align([a, shuffled]).X, align([a, b]).X)
    with pytest.raises(AlignmentError, match="T0003"):
        align([a, b.subset(np.arange(10) != 3)])


def test_align_through_score_files(tmp_path, rng):
    ids = [f"U{i:03d}" for i in range(100)]
    bona = rng.random(100) < 0.5
    attacks = ["-" if x else "A01" for x in bona]
    sets = [ScoreSet(ids, rng.standard_normal(100) * 10 ** k, bona, attacks) for k in range(3)]
    reread = []
    for k, s in enumerate(sets):
        write_scores(tmp_path / f"{k}.txt", s.utt_ids, s.scores)
        d = read_scores(tmp_path / f"{k}.txt")
        reread.append(ScoreSet(list(d), list(d.values()), bona, attacks))
    assert align(reread).X.tobytes() == align(sets).X.tobytes()


def test_model_text_roundtrip(tmp_path, rng):
    model = FusionModel(rng.standard_normal(3), 0.125, rng.standard_normal(3), rng.uniform(0.1, 2, 3), ("a", "b", "c"))
    model.save(tmp_path / "f.txt")
    back = FusionModel.load(tmp_path / "f.txt")
    assert back.to_text() == model.to_text()
    assert (tmp_path / "f.txt").read_text().splitlines()[0] == "K 3"
    with pytest.raises(ValueError):
        FusionModel.from_text("K 2\nweights 1 2\n")
