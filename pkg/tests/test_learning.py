import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsprank.core import BilinearModel, EdgeSelection, RankingGroup, as_adjacency, build_adjacency, edges_to_tour
from tsprank.learning import (Optimizer, TrainConfig, backprop_to_params, global_loss, gold_selection,
                              group_gradient, local_loss, position_weights, predict, structured_margin,
                              successor_row_weights, target_adjacency, train)
from tsprank.solvers import brute_force_all, loss_augment

import oracles


def group(ranks, dim=2, seed=0):
    E = np.random.default_rng(seed).standard_normal((len(ranks), dim))
    return RankingGroup("g", tuple(f"e{i}" for i in range(len(ranks))), E, tuple(ranks))


def random_model(rng, d, linear=False, d_in=None):
    if not linear:
        return BilinearModel(rng.standard_normal((d, d)), rng.standard_normal())
    d_in = d_in or d
    return BilinearModel(rng.standard_normal((d, d)), rng.standard_normal(), "linear",
                         rng.standard_normal((d, d_in)), rng.standard_normal(d))


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def numeric_grad(f, x, h=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += h
        down[idx] -= h
        g[idx] = (f(up) - f(down)) / (2 * h)
    return g


def test_target_adjacency_examples():
    assert np.argwhere(target_adjacency(group([1, 2, 3]))).tolist() == [[0, 1], [1, 2]]
    assert sorted(map(tuple, np.argwhere(target_adjacency(group([2, 3, 1]))).tolist())) == [(0, 1), (2, 0)]
    assert not target_adjacency(group([1])).any()


@given(ranks=st.integers(1, 9).flatmap(lambda n: st.permutations(list(range(1, n + 1)))))
def test_target_is_valid_chain(ranks):
    At = target_adjacency(group(ranks))
    assert At.sum() == len(ranks) - 1
    assert EdgeSelection.from_matrix(At).is_valid_path()
    assert EdgeSelection.from_matrix(At) == gold_selection(group(ranks))


def test_position_weights_examples():
    assert position_weights(group([4, 3, 2, 1]), "none").tolist() == [1, 1, 1, 1]
    assert position_weights(group([2, 1, 3]), "rank").tolist() == [2, 1, 3]
    assert position_weights(group([2, 1, 3]), "flipped").tolist() == [2, 3, 1]


def test_row_weight_is_successor_weight():
    g = group([2, 1, 3])  # tour 1 -> 0 -> 2
    w = successor_row_weights(position_weights(g, "rank"), target_adjacency(g))
    assert w.tolist() == [3.0, 2.0, 0.0]


def test_local_loss_examples():
    A = as_adjacency([[0, 0.7], [0.2, 0]])
    At = np.array([[0, 1], [0, 0]])
    loss, _ = local_loss(A, At, [1.0, 0.0])
    assert loss == 0.0
    A3 = as_adjacency(np.zeros((3, 3)))
    At3 = np.zeros((3, 3))
    At3[0, 1] = 1
    loss, _ = local_loss(A3, At3, [1.0, 0.0, 0.0])
    assert loss == pytest.approx(math.log(2), abs=1e-15)


def test_local_loss_gradient_vs_finite_differences(rng):
    g = group([3, 1, 5, 2, 4])
    At = target_adjacency(g)
    w = successor_row_weights(position_weights(g), At)
    A = as_adjacency(rng.standard_normal((5, 5)))

    def f(flat):
        return local_loss(as_adjacency(flat), At, w)[0]

    num = numeric_grad(f, np.nan_to_num(A))
    _, grad = local_loss(A, At, w)
    np.fill_diagonal(num, 0.0)
    assert rel_err(grad, num) < 1e-6


def test_local_loss_vanishes_as_gold_logit_grows():
    g = group([1, 2, 3, 4])
    At = target_adjacency(g)
    w = np.ones(4)
    values = []
    for big in (1.0, 10.0, 40.0):
        A = np.zeros((4, 4)) + big * At
        values.append(local_loss(as_adjacency(A), At, w)[0])
    assert values[0] > values[1] > values[2] and values[2] < 1e-15


def test_structured_margin_examples():
    x = EdgeSelection(3, {(0, 1), (1, 2)})
    assert structured_margin(x, x) == 0
    assert structured_margin(x, EdgeSelection(3, {(0, 1), (2, 1)})) == 1
    assert structured_margin(x, EdgeSelection.from_tour([2, 1, 0])) == 2


@given(a=st.integers(2, 8).flatmap(lambda n: st.tuples(st.permutations(list(range(n))),
                                                         st.permutations(list(range(n))))))
def test_structured_margin_bounds(a):
    x, xt = (EdgeSelection.from_tour(p) for p in a)
    assert 0 <= structured_margin(x, xt) <= len(a[0]) - 1


def test_global_loss_examples():
    xt = EdgeSelection.from_tour([1, 2, 0])
    A = np.full((3, 3), -10.0)
    for i, j in xt.edges:
        A[i, j] = 10.0
    loss, grad, x_star = global_loss(as_adjacency(A), xt)
    assert loss == 0.0 and not grad.any() and x_star == xt

    chain = EdgeSelection.from_tour([0, 1, 2])
    loss, grad, x_star = global_loss(as_adjacency(np.zeros((3, 3))), chain)
    assert loss == 2.0
    assert set(np.unique(grad)) <= {-1.0, 0.0, 1.0}
    assert np.array_equal(grad, x_star.to_matrix() - chain.to_matrix())

    loss, _, x_star = global_loss(as_adjacency(np.zeros((2, 2))), EdgeSelection.from_tour([0, 1]))
    assert loss == 1.0 and x_star.edges == {(1, 0)}


@settings(max_examples=80)
@given(n=st.integers(2, 6), seed=st.integers(0, 2**32 - 1), scale=st.sampled_from([0.1, 1.0, 10.0]))
def test_margin_soundness(n, seed, scale):
    rng = np.random.default_rng(seed)
    A = as_adjacency(scale * rng.standard_normal((n, n)))
    xt = EdgeSelection.from_tour(rng.permutation(n))
    loss, _, _ = global_loss(A, xt)
    aug = loss_augment(A, xt)
    best_aug = brute_force_all(aug)[0][1]
    gold_value = oracles.path_value(A, edges_to_tour(xt))
    assert (loss == 0.0) == (best_aug <= gold_value + 1e-12)
    assert loss == pytest.approx(max(0.0, best_aug - gold_value), abs=1e-9)


def test_backprop_examples():
    g = RankingGroup("g", ("a", "b"), np.eye(2), (1, 2))
    m = BilinearModel(np.eye(2))
    zero = backprop_to_params(m, g, np.zeros((2, 2)))
    assert not zero.dW.any() and zero.db == 0.0
    dA = np.zeros((2, 2))
    dA[0, 1] = 1.0
    b = backprop_to_params(m, g, dA)
    assert b.dW.tolist() == [[0, 1], [0, 0]] and b.db == 1.0


def _param_fd_check(model, g, dA_weights, tol):
    """Loss = sum(G * A) off-diagonal; its parameter gradient is the backprop of G."""
    analytic = backprop_to_params(model, g, dA_weights).as_dict()
    mask = ~np.eye(g.n, dtype=bool)

    def loss_for(name):
        def f(value):
            A = build_adjacency(model.with_params(**{name: value}), g)
            return float(np.sum(dA_weights[mask] * A[mask]))
        return f

    for name, value in model.params().items():
        num = numeric_grad(loss_for(name), value)
        assert rel_err(analytic[name], num) < tol, name


@pytest.mark.parametrize("linear", [False, True])
def test_backprop_vs_finite_differences(rng, linear):
    m = random_model(rng, 3, linear, d_in=4)
    g = group([2, 4, 1, 3], dim=m.input_dim, seed=5)
    _param_fd_check(m, g, rng.standard_normal((4, 4)), 1e-5)


def test_weight_decay_contract():
    m = BilinearModel(np.full((2, 2), 3.0), 1.0)
    for opt in ("adam", "sgd"):
        cfg = TrainConfig(learning_rate=0.1, weight_decay=0.5, optimizer=opt)
        stepped = Optimizer(cfg).step(m, {"W": np.zeros((2, 2)), "b": np.array(0.0)})
        assert np.linalg.norm(stepped.W) == pytest.approx(np.linalg.norm(m.W) * (1 - 0.05), rel=1e-15)


def test_predict_examples():
    assert predict(BilinearModel(np.eye(2)), group([1]))[1] == [1]
    # s(i, j) = 5 (x_i - x_j): the path score telescopes to 5 (x_first - x_last)
    E = np.array([[3.0, 1.0], [1.0, 1.0], [2.0, 1.0]])
    g = RankingGroup("g", ("a", "b", "c"), E, (1, 3, 2))
    m = BilinearModel([[0.0, 5.0], [-5.0, 0.0]])
    assert predict(m, g)[1] == [1, 3, 2]


@given(seed=st.integers(0, 10**6), c=st.floats(-3, 3))
def test_predict_invariant_to_constant_shift(seed, c):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 3)
    g = group([1, 2, 3, 4, 5], dim=3, seed=seed)
    assert predict(m, g)[0] == predict(m.with_params(b=m.b + c), g)[0]


def test_global_zero_when_gold_already_optimal():
    g = RankingGroup("g", ("a", "b", "c"), np.array([[3.0, 1.0], [1.0, 1.0], [2.0, 1.0]]), (1, 3, 2))
    m = BilinearModel(100 * np.array([[0.0, 5.0], [-5.0, 0.0]]))
    assert group_gradient(m, g, "global").loss_value == 0.0
    seen = []
    train(m, [g], TrainConfig(mode="global", epochs=2, extra_epochs=0, batch_size=1, weight_decay=0.0),
          on_epoch=seen.append)
    assert seen[0]["mean_loss"] >= 0


def test_training_is_deterministic():
    gs = [group(list(np.random.default_rng(s).permutation(5) + 1), dim=3, seed=s) for s in range(6)]
    cfg = TrainConfig(mode="global", epochs=3, extra_epochs=1, batch_size=2, learning_rate=1e-2)
    m0 = BilinearModel.init(3, "linear", seed=4)
    a, log_a = train(m0, gs, cfg)
    b, log_b = train(m0, gs, cfg)
    for k, v in a.params().items():
        assert np.array_equal(v, b.params()[k])
    assert log_a.records == log_b.records


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    assert TrainConfig(mode="global").total_epochs == 150
    assert TrainConfig().total_epochs == 100


@pytest.mark.parametrize("mode,hybrid,expected", [
    ("local", True, ["local"] * 6),
    ("global", True, ["global", "local"] * 3),
    ("global", False, ["global"] * 6),
])
def test_batch_schedule(monkeypatch, mode, hybrid, expected):
    import tsprank.learning as learning
    seen = []
    real = learning.group_gradient

    def spy(model, g, batch_mode, *a, **k):
        seen.append(batch_mode)
        return real(model, g, batch_mode, *a, **k)

    monkeypatch.setattr(learning, "group_gradient", spy)
    gs = [group([1, 2, 3], seed=s) for s in range(3)]
    # 3 groups, batch size 1: the counter runs across epochs (global, local, global | local, ...)
    train(BilinearModel.init(2), gs, TrainConfig(mode=mode, epochs=2, extra_epochs=0, batch_size=1, hybrid=hybrid))
    assert seen == expected
