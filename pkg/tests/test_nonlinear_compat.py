import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zslbench.base import DivergenceError, predict
from zslbench.benchmark import final_split
from zslbench.datamodel import DatasetBundle, SplitSpec, restrict_candidates
from zslbench.evaluation import evaluate_gzsl, evaluate_zsl
from zslbench.linear_compat import SgdConfig, compatibility, train_sgd
from zslbench.nonlinear_compat import (
    CmtModel,
    CmtStar,
    LatemModel,
    NoveltyDetector,
    cmt_loss_grad,
    cmt_map,
    cmt_star_predict,
    fit_novelty,
    latem_compatibility,
    latem_loss,
    latem_scores,
    latem_subgradient,
    route_unseen,
    train_cmt,
    train_latem,
)
from zslbench.splitgen import SyntheticConfig, make_synthetic

from test_linear_compat import fd_gradient, rel_err


def bimodal_bundle(seed, n_classes=20, a=8, d=8, per_class=40, noise=0.05):
    """Every class is seen through one of two unrelated linear views, so no
    single bilinear map fits all images."""
    rng = np.random.default_rng(seed)
    E = rng.normal(size=(n_classes, a))
    E /= np.linalg.norm(E, axis=1, keepdims=True)
    views = rng.normal(size=(2, d, a))
    X, y = [], []
    for c in range(n_classes):
        for i in range(per_class):
            X.append(views[i % 2] @ E[c] + noise * rng.normal(size=d))
            y.append(c)
    split = SplitSpec(range(15), [], range(15, n_classes))
    return DatasetBundle(np.array(X), np.array(y), E, split)


# LATEM ------------------------------------------------------------------------

def test_latem_k1_equals_bilinear():
    rng = np.random.default_rng(0)
    W = rng.normal(size=(4, 3))
    x, y = rng.normal(size=4), rng.normal(size=3)
    assert latem_compatibility(W[None], x, y) == compatibility(W, x, y)


def test_latem_max_of_two():
    # x = 1, y = 1: the two maps score -1 and 3
    W_set = np.array([[[-1.0]], [[3.0]]])
    assert latem_compatibility(W_set, [1.0], [1.0]) == 3.0


def test_latem_selection_matches_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(50):
        W_set = rng.normal(size=(4, 5, 3))
        x, y = rng.normal(size=5), rng.normal(size=3)
        s = latem_scores(W_set, x, y)
        by_hand = [float(x @ W @ y) for W in W_set]
        assert int(np.argmax(s)) == int(np.argmax(by_hand))
        assert latem_compatibility(W_set, x, y) == pytest.approx(max(by_hand), abs=1e-12)


def test_latem_shape_mismatch():
    with pytest.raises(ValueError):
        latem_compatibility(np.zeros((2, 3, 3)), np.zeros(4), np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.floats(1e-3, 1e3))
def test_latem_max_property_and_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    W_set = rng.normal(size=(3, 4, 2))
    x, y = rng.normal(size=4), rng.normal(size=2)
    top = latem_compatibility(W_set, x, y)
    assert all(top >= compatibility(W, x, y) for W in W_set)

    E = rng.normal(size=(5, 2))
    X = rng.normal(size=(10, 4))
    np.testing.assert_array_equal(
        predict(LatemModel(W_set, E), X, range(5)), predict(LatemModel(c * W_set, E), X, range(5))
    )


def test_latem_subgradient_finite_differences():
    rng = np.random.default_rng(2)
    checked = 0
    while checked < 20:
        W_set = rng.normal(size=(2, 4, 3))
        x = rng.normal(size=4)
        E = rng.normal(size=(4, 3))
        label = int(rng.integers(4))
        s_all = np.stack([x @ W @ E.T for W in W_set])
        s = s_all.max(0)
        h = np.delete(1.0 + s - s[label], label)
        # skip hinge kinks and latent-argmax switches
        if np.abs(h).min() < 1e-3 or np.abs(s_all[0] - s_all[1]).min() < 1e-3:
            continue
        g = latem_subgradient(W_set, x, label, E, range(4))
        fd = fd_gradient(lambda V: latem_loss(V, x, label, E, range(4)), W_set)
        assert rel_err(g, fd) < 1e-4
        checked += 1


def test_latem_k1_reduces_to_devise(synth):
    cfg = SgdConfig(epochs=3, seed=9)
    a = train_latem(synth, cfg, K=1).W_set[0]
    b = train_sgd("devise", synth, cfg).W
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("seed", range(5))
def test_latem_two_maps_help_on_bimodal_data(seed):
    b = bimodal_bundle(seed)
    cfg = SgdConfig(learning_rate=0.01, epochs=20, seed=0)
    one = evaluate_zsl(train_latem(b, cfg, K=1), b).acc_unseen
    two = evaluate_zsl(train_latem(b, cfg, K=2), b).acc_unseen
    assert two >= one


def test_latem_deterministic(synth):
    cfg = SgdConfig(epochs=2, seed=4)
    assert train_latem(synth, cfg, 3).W_set.tobytes() == train_latem(synth, cfg, 3).W_set.tobytes()


def test_latem_rejects_k0(tiny_bundle):
    with pytest.raises(ValueError):
        train_latem(tiny_bundle, SgdConfig(), K=0)


# CMT --------------------------------------------------------------------------

def test_cmt_map_examples():
    rng = np.random.default_rng(0)
    W1 = rng.normal(size=(3, 4))
    out = cmt_map(W1, np.zeros((4, 5)), rng.normal(size=5))
    assert not out.any()
    assert cmt_map([[1.0]], [[1.0]], [0.5])[0] == pytest.approx(0.46211715726, abs=1e-10)


def test_cmt_map_shape_mismatch():
    with pytest.raises(ValueError):
        cmt_map(np.eye(2), np.eye(3), np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(0.1, 100.0))
def test_cmt_map_bounded(seed, scale):
    rng = np.random.default_rng(seed)
    W1, W2 = rng.normal(size=(3, 6)), scale * rng.normal(size=(6, 4))
    out = cmt_map(W1, W2, rng.normal(size=4))
    assert np.all(np.abs(out) <= np.abs(W1).sum(axis=1) + 1e-12)


def test_cmt_jacobian_finite_differences():
    rng = np.random.default_rng(5)
    W1, W2 = rng.normal(size=(3, 6)), rng.normal(size=(6, 4))
    x = rng.normal(size=4)
    J = np.zeros((3, 4))
    h = 1e-5
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        J[:, k] = (cmt_map(W1, W2, x + e) - cmt_map(W1, W2, x - e)) / (2 * h)
    analytic = W1 @ np.diag(1 - np.tanh(W2 @ x) ** 2) @ W2
    assert rel_err(analytic, J) < 1e-4


def test_cmt_loss_gradient_finite_differences():
    rng = np.random.default_rng(6)
    for _ in range(20):
        W1, W2 = rng.normal(size=(3, 6)), rng.normal(size=(6, 4))
        x, t = rng.normal(size=4), rng.normal(size=3)
        _, g1, g2 = cmt_loss_grad(W1, W2, x, t)
        fd1 = fd_gradient(lambda V: cmt_loss_grad(V, W2, x, t)[0], W1)
        fd2 = fd_gradient(lambda V: cmt_loss_grad(W1, V, x, t)[0], W2)
        assert rel_err(g1, fd1) < 1e-4
        assert rel_err(g2, fd2) < 1e-4


def test_cmt_zero_gradient_fixed_point():
    rng = np.random.default_rng(7)
    W1, W2 = rng.normal(size=(2, 5)), rng.normal(size=(5, 3))
    X = rng.normal(size=(4, 3))
    # each image is its own class whose embedding is exactly its mapped point
    E = np.array([cmt_map(W1, W2, x) for x in X])
    b = DatasetBundle(X, [0, 1, 2, 3], E, SplitSpec([0, 1, 2], [], [3]))
    for x, t in zip(X, E):
        assert cmt_loss_grad(W1, W2, x, t)[0] < 1e-25
    model = train_cmt(b, SgdConfig(epochs=5), hidden=5, init=(W1, W2))
    np.testing.assert_allclose(model.W1, W1, atol=1e-12)
    np.testing.assert_allclose(model.W2, W2, atol=1e-12)


def test_cmt_synthetic_low_noise(synth_final):
    model = train_cmt(synth_final, SgdConfig(epochs=10))
    assert evaluate_zsl(model, synth_final).acc_unseen >= 0.9


def test_cmt_deterministic(synth):
    cfg = SgdConfig(epochs=2, seed=3)
    a, b = train_cmt(synth, cfg, 16), train_cmt(synth, cfg, 16)
    assert a.W1.tobytes() == b.W1.tobytes() and a.W2.tobytes() == b.W2.tobytes()


def test_cmt_divergence(synth):
    with pytest.raises(DivergenceError), np.errstate(all="ignore"):
        train_cmt(synth, SgdConfig(learning_rate=1e6, epochs=3), 8)


def test_cmt_predicts_nearest_embedding():
    model = CmtModel(np.eye(2), np.eye(2), np.array([[0.0, 0.0], [0.7, 0.0], [0.0, 0.7]]))
    assert predict(model, [5.0, 0.0], [0, 1, 2]) == 1
    assert predict(model, [0.0, 5.0], [0, 1, 2]) == 2


# novelty detection -------------------------------------------------------------

def line_model():
    """Identity-like CMT on 1-d data; tanh keeps points inside (-1, 1)."""
    E = np.array([[-0.5], [0.5], [0.99]])
    return CmtModel([[1.0]], [[1.0]], E)


def line_bundle():
    X, y = [], []
    for c, centre in ((0, -0.55), (1, 0.55)):
        X += list(np.arctanh(centre + 0.02 * np.linspace(-1, 1, 21)))
        y += [c] * 21
    X.append(np.arctanh(0.99))
    y.append(2)
    return DatasetBundle(np.array(X)[:, None], y, line_model().class_embeddings, SplitSpec([0, 1], [], [2]))


def test_novelty_quantile_one_flags_nothing():
    b = line_bundle()
    det = fit_novelty(line_model(), b, quantile=1.0)
    idx = b.image_indices([0, 1])
    assert not route_unseen(line_model(), det, b.features[idx], np.array([0, 1])).any()


def test_novelty_median_flags_half():
    b = line_bundle()
    model = line_model()
    det = fit_novelty(model, b, quantile=0.5)
    for c in (0, 1):
        idx = b.image_indices([c])
        flagged = route_unseen(model, det, b.features[idx], np.array([0, 1]))
        # 21 distinct distances: strictly above the median are 10 of them
        assert flagged.sum() == 10


def test_novelty_far_point_flagged():
    b = line_bundle()
    model = line_model()
    det = fit_novelty(model, b, quantile=0.95)
    far = np.array([[np.arctanh(0.99)]])
    assert route_unseen(model, det, far, np.array([0, 1]))[0]


def test_novelty_rejects_nonfinite_threshold():
    with pytest.raises(ValueError):
        NoveltyDetector([0], [np.inf], 0.9)


def test_cmt_star_routing_examples():
    b = line_bundle()
    model = line_model()
    det = fit_novelty(model, b, quantile=0.95)
    seen = restrict_candidates(b, [0, 1])
    unseen = restrict_candidates(b, [2])
    on_seen = np.arctanh(0.5)
    assert cmt_star_predict(model, det, [on_seen], seen, unseen) == 1
    assert cmt_star_predict(model, det, [np.arctanh(0.99)], seen, unseen) == 2


def test_cmt_star_route_consistency(synth_final):
    model = train_cmt(synth_final, SgdConfig(epochs=3), 16)
    det = fit_novelty(model, synth_final, 0.5)
    seen = synth_final.split.seen_classes
    X = synth_final.features
    preds = CmtStar(model, det).predict(X, synth_final.split.all_classes)
    novel = route_unseen(model, det, X, seen)
    np.testing.assert_array_equal(np.isin(preds, seen), ~novel)


def test_cmt_star_beats_cmt_on_seen_biased_data():
    # with heavier noise plain CMT pulls unseen images toward seen classes
    b = make_synthetic(SyntheticConfig(noise_sigma=0.5))
    b = b.with_split(final_split(b.split))
    model = train_cmt(b, SgdConfig(epochs=10), 64)
    star = CmtStar(model, fit_novelty(model, b, 0.95))
    assert evaluate_gzsl(star, b).harmonic_mean >= evaluate_gzsl(model, b).harmonic_mean
