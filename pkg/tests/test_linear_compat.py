import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_instance
from zslbench.base import DivergenceError, predict
from zslbench.benchmark import final_split
from zslbench.datamodel import DatasetBundle, SplitSpec, restrict_candidates
from zslbench.evaluation import evaluate_zsl
from zslbench.linear_compat import (
    BilinearModel,
    EszslConfig,
    SgdConfig,
    ale_loss,
    ale_rank_weight,
    compatibility,
    devise_loss,
    eszsl_objective,
    eszsl_solve,
    loss_subgradient,
    sje_loss,
    train_eszsl,
    train_sgd,
)
from zslbench.splitgen import SyntheticConfig, make_synthetic

LOSSES = {"devise": devise_loss, "ale": ale_loss, "sje": sje_loss}


def scores_instance(target_scores, true_pos=0):
    """W = I, x = 1, phi(y) = s_y: F(x, y) equals the requested score."""
    s = np.asarray(target_scores, dtype=float)
    E = s[:, None]
    return np.eye(1), np.array([1.0]), E, list(range(len(s))), true_pos


def fd_gradient(f, W, h=1e-5):
    g = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += h
        Wm[idx] -= h
        g[idx] = (f(Wp) - f(Wm)) / (2 * h)
    return g


def rel_err(a, b):
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if denom == 0 else np.linalg.norm(a - b) / denom


def non_kink_instance(rng, n_classes=4, d=5, a=3, margin=1.0, gap=1e-3):
    """Random instance whose hinge arguments all stay away from zero."""
    while True:
        W, x, E = random_instance(rng, n_classes, d, a)
        s = x @ W @ E.T
        label = int(rng.integers(n_classes))
        h = margin + s - s[label]
        h = np.delete(h, label)
        # sje also has a kink where two wrong classes tie for the max
        top = np.sort(h)[-2:] if len(h) > 1 else h
        if np.all(np.abs(h) > gap) and (len(h) < 2 or top[1] - top[0] > gap):
            return W, x, E, label


# compatibility ----------------------------------------------------------------

def test_compatibility_examples():
    assert compatibility(np.eye(2), [1, 0], [1, 0]) == 1.0
    assert compatibility(np.eye(2), [1, 2], [3, 4]) == 11.0
    assert compatibility(np.zeros((3, 2)), [1, 2, 3], [4, 5]) == 0.0


def test_compatibility_dimension_mismatch():
    with pytest.raises(ValueError):
        compatibility(np.eye(2), [1, 2, 3], [1, 0])


# predict ----------------------------------------------------------------------

def test_predict_picks_highest_score():
    # class A (id 0) scores 0.9, class B (id 1) scores 0.1
    model = BilinearModel(np.eye(1), [[0.9], [0.1]])
    assert predict(model, [1.0], [0, 1]) == 0


def test_predict_tie_goes_to_smallest_id():
    E = np.zeros((6, 1))
    E[2] = E[5] = 1.0
    model = BilinearModel(np.eye(1), E)
    assert predict(model, [1.0], [5, 2]) == 2


def test_predict_restricted_never_leaves_candidates(synth):
    model = train_sgd("devise", synth, SgdConfig(epochs=2))
    unseen = synth.split.test_unseen_classes
    preds = predict(model, synth.features, restrict_candidates(synth, unseen))
    assert set(preds.tolist()) <= set(unseen.tolist())


def test_predict_empty_candidates():
    with pytest.raises(ValueError):
        predict(BilinearModel(np.eye(1), [[1.0]]), [1.0], [])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.floats(1e-3, 1e3))
def test_argmax_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    W, _, E = random_instance(rng, 6, 4, 3)
    X = rng.normal(size=(20, 4))
    ids = list(range(6))
    np.testing.assert_array_equal(
        predict(BilinearModel(W, E), X, ids), predict(BilinearModel(c * W, E), X, ids)
    )


# losses -----------------------------------------------------------------------

def test_devise_examples():
    W, x, E, tr, pos = scores_instance([1.5, 0.2])
    assert devise_loss(W, x, pos, E, tr) == 0.0
    W, x, E, tr, pos = scores_instance([1.2, 1.0])
    assert devise_loss(W, x, pos, E, tr) == pytest.approx(0.8, abs=1e-12)


def test_ale_rank_weight():
    assert ale_rank_weight(0) == 0.0
    assert ale_rank_weight(1) == 1.0
    assert ale_rank_weight(3) == pytest.approx(1 + 1 / 2 + 1 / 3, abs=1e-15)


def test_ale_examples():
    W, x, E, tr, pos = scores_instance([5.0, 1.0, 2.0])
    assert ale_loss(W, x, pos, E, tr) == 0.0
    # one violator with hinge 1 + 0.4 - 1.0 = 0.4; the other is satisfied
    W, x, E, tr, pos = scores_instance([1.0, 0.4, -3.0])
    assert ale_loss(W, x, pos, E, tr) == pytest.approx(0.4, abs=1e-12)


def ale_brute_force(s, pos, margin=1.0):
    """Direct enumeration: count rank violators, then weight each hinge."""
    r = 0
    for y in range(len(s)):
        if y != pos and s[y] + margin >= s[pos]:
            r += 1
    if r == 0:
        return 0.0
    lr = sum(1.0 / i for i in range(1, r + 1))
    total = 0.0
    for y in range(len(s)):
        if y != pos:
            total += (lr / r) * max(0.0, margin + s[y] - s[pos])
    return total


def test_ale_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(200):
        W, x, E = random_instance(rng, 6, 4, 3)
        label = int(rng.integers(6))
        s = x @ W @ E.T
        got = ale_loss(W, x, label, E, range(6))
        assert abs(got - ale_brute_force(s, label)) < 1e-10


def test_sje_examples():
    # wrong classes with hinge arguments 0.3 and 0.7 (margin 1): scores -0.7, -0.3
    W, x, E, tr, pos = scores_instance([0.0, -0.7, -0.3])
    assert sje_loss(W, x, pos, E, tr) == pytest.approx(0.7, abs=1e-12)
    W, x, E, tr, pos = scores_instance([3.0, 0.5, 1.9])
    assert sje_loss(W, x, pos, E, tr) == 0.0


@pytest.mark.parametrize("kind", sorted(LOSSES))
def test_subgradient_matches_finite_differences(kind):
    rng = np.random.default_rng(11)
    for _ in range(25):
        W, x, E, label = non_kink_instance(rng)
        tr = range(4)
        g = loss_subgradient(kind, W, x, label, E, tr)
        fd = fd_gradient(lambda V: LOSSES[kind](V, x, label, E, tr), W)
        assert rel_err(g, fd) < 1e-4


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), margin=st.floats(0.0, 2.0))
def test_loss_properties(seed, margin):
    rng = np.random.default_rng(seed)
    W, x, E = random_instance(rng, 5, 4, 3)
    label = int(rng.integers(5))
    vals = {k: f(W, x, label, E, range(5), margin) for k, f in LOSSES.items()}
    assert all(v >= 0 for v in vals.values())
    assert vals["sje"] <= vals["devise"] + 1e-12
    s = x @ W @ E.T
    if np.min(np.delete(s[label] - s - margin, label)) >= 0:
        assert all(v == 0 for v in vals.values())


def test_losses_zero_when_margin_satisfied():
    W, x, E, tr, pos = scores_instance([4.0, 1.0, 2.5])
    for f in LOSSES.values():
        assert f(W, x, pos, E, tr) == 0.0


def test_loss_rejects_non_training_label():
    W, x, E, _, _ = scores_instance([1.0, 0.0, 2.0])
    with pytest.raises(ValueError):
        devise_loss(W, x, 2, E, [0, 1])


# training ---------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["devise", "ale", "sje"])
def test_sgd_separable_synthetic_perfect(kind):
    b = make_synthetic(SyntheticConfig(noise_sigma=0.0))
    b = b.with_split(final_split(b.split))
    model = train_sgd(kind, b, SgdConfig())
    assert evaluate_zsl(model, b).acc_unseen == 1.0


@pytest.mark.parametrize("kind", ["devise", "ale", "sje"])
def test_sgd_zero_epochs_returns_zero_w(kind, tiny_bundle):
    model = train_sgd(kind, tiny_bundle, SgdConfig(epochs=0))
    assert not model.W.any()


@pytest.mark.parametrize("kind", ["devise", "ale", "sje"])
def test_sgd_deterministic(kind, synth):
    cfg = SgdConfig(epochs=3, seed=5)
    a = train_sgd(kind, synth, cfg).W
    b = train_sgd(kind, synth, cfg).W
    assert a.tobytes() == b.tobytes()


def test_sgd_seed_changes_order(synth):
    a = train_sgd("devise", synth, SgdConfig(epochs=1, seed=1)).W
    b = train_sgd("devise", synth, SgdConfig(epochs=1, seed=2)).W
    assert not np.array_equal(a, b)


def test_sgd_divergence_reports():
    # two classes share one image position, so some hinge is always active
    X = np.array([[1.0, 1.0], [1.0, 1.0]])
    b = DatasetBundle(X, [0, 1], [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], SplitSpec([0, 1], [], [2]))
    with pytest.raises(DivergenceError), np.errstate(all="ignore"):
        train_sgd("devise", b, SgdConfig(learning_rate=1e308, epochs=5))


def test_sgd_config_validation():
    with pytest.raises(ValueError):
        SgdConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        SgdConfig(epochs=-1)


# ESZSL ------------------------------------------------------------------------

def tiny_eszsl_problem():
    X = np.array([[1.0, 0.2], [0.8, -0.1], [-0.3, 1.1], [0.1, 0.9]])
    S = np.array([[1.0, 0.3], [0.2, 1.0]])
    Y = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    return X, S, Y


def eszsl_gradient(V, X, S, Y, g, l):
    resid = X @ V @ S.T - Y
    return 2 * (X.T @ resid @ S + g * V @ S.T @ S + l * X.T @ X @ V + g * l * V)


def test_eszsl_closed_form_beats_gradient_descent():
    X, S, Y = tiny_eszsl_problem()
    g, l = 0.5, 0.5
    V_star = eszsl_solve(X, S, Y, g, l)
    V = np.zeros((2, 2))
    for _ in range(1000):
        V -= 0.05 * eszsl_gradient(V, X, S, Y, g, l)
    closed = eszsl_objective(V_star, X, S, Y, g, l)
    assert closed <= eszsl_objective(V, X, S, Y, g, l) + 1e-6
    # the gradient vanishes at the closed-form solution
    assert np.abs(eszsl_gradient(V_star, X, S, Y, g, l)).max() < 1e-10


def test_eszsl_objective_minimal_against_perturbations():
    rng = np.random.default_rng(0)
    X, S, Y = tiny_eszsl_problem()
    V_star = eszsl_solve(X, S, Y, 1.0, 2.0)
    best = eszsl_objective(V_star, X, S, Y, 1.0, 2.0)
    for _ in range(100):
        V = V_star + rng.normal(scale=0.1, size=V_star.shape)
        assert best <= eszsl_objective(V, X, S, Y, 1.0, 2.0)


def test_eszsl_norm_shrinks_with_regularisation(synth):
    norms = [np.linalg.norm(train_eszsl(synth, EszslConfig(v, v)).W) for v in (1.0, 10.0, 100.0)]
    assert norms[0] > norms[1] > norms[2]


def test_eszsl_recovers_bilinear_generator():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(40, 6))
    S = rng.normal(size=(8, 3))
    W_true = rng.normal(size=(6, 3))
    Y = X @ W_true @ S.T
    V = eszsl_solve(X, S, Y, 1e-8, 1e-8)
    assert np.abs(V - W_true).max() < 1e-3


def test_eszsl_singular_system():
    X = np.array([[1.0, 1.0], [2.0, 2.0]])  # rank 1
    S = np.array([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(np.linalg.LinAlgError):
        eszsl_solve(X, S, np.eye(2), 0.0, 1.0)


def test_eszsl_beta_tied():
    assert EszslConfig(2.0, 3.0).beta == 6.0
    with pytest.raises(ValueError):
        EszslConfig(-1.0, 1.0)
