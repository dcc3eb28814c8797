import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rce import tensor as T
from rce.tensor import ContractError, DimensionError, DomainError, Layer, Tensor

from conftest import analytic_grad, numeric_grad, rel_err


def triple_loop_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for q in range(k):
                s += a[i, q] * b[q, j]
            out[i, j] = s
    return out


def test_matmul_identity_and_hand_product():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(T.matmul(Tensor(np.eye(2)), m).data, m.data)
    assert T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, triple_loop_matmul(a, b),
                               rtol=0, atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


@pytest.mark.parametrize("op,x,expected", [
    ("sigmoid", 0.0, 0.5),
    ("softplus", 0.0, np.log(2.0)),
    ("relu", -3.0, 0.0),
    ("relu", 3.0, 3.0),
    ("exp", 0.0, 1.0),
    ("neg", 2.0, -2.0),
])
def test_elementwise_values(op, x, expected):
    assert T.elementwise(op, Tensor(x)).item() == pytest.approx(expected, abs=1e-15)


def test_log_domain():
    with pytest.raises(DomainError):
        T.log(Tensor([1.0, 0.0]))


def test_broadcast_limited_to_scalars():
    a = Tensor(np.ones((2, 3)))
    assert (a * 2.0).shape == (2, 3)
    with pytest.raises(DimensionError):
        T.add(a, Tensor(np.ones(3)))


def test_square_grad():
    x = Tensor(3.0, requires_grad=True)
    (g,) = analytic_grad(lambda: x * x, [x])
    assert g == pytest.approx(6.0)


def test_constant_loss_zero_grads():
    p = Tensor(np.ones(3), requires_grad=True)
    with T.Tape() as tape:
        loss = T.sum(Tensor(np.ones(3)))
    T.backward(loss, tape, [p])
    assert np.array_equal(p.grad, np.zeros(3))


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with T.Tape() as tape:
        y = x * 2.0
    with pytest.raises(ContractError):
        T.backward(y, tape)


def test_gradients_accumulate_across_consumers():
    x = Tensor(2.0, requires_grad=True)
    (g,) = analytic_grad(lambda: x * 3.0 + x * x + T.exp(x), [x])
    assert g == pytest.approx(3.0 + 4.0 + np.exp(2.0))


def test_sigmoid_matmul_grad_vs_finite_differences(rng):
    W = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    x = Tensor(rng.normal(size=(5, 1)), requires_grad=True)

    def f():
        return T.sum(T.sigmoid(T.matmul(W, x)))

    gW, gx = analytic_grad(f, [W, x])
    assert rel_err(gW, numeric_grad(lambda: f().item(), W.data)) < 1e-6
    assert rel_err(gx, numeric_grad(lambda: f().item(), x.data)) < 1e-6


def test_structural_ops_grad(rng):
    """Every structural primitive under one composed function."""
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=4), requires_grad=True)
    s = Tensor(rng.normal(size=3), requires_grad=True)
    m = Tensor(rng.normal(size=(3, 2, 2)), requires_grad=True)
    params = [a, b, s, m]

    def f():
        h = T.softplus(T.add_bias(a, b))
        h = T.scale_rows(h, s)
        left, right = T.cols(h, 0, 2), T.cols(h, 2, 4)
        mv = T.batched_matvec(m, right)
        flat = T.reshape(T.reshape(left, (6,)), (3, 2))
        cat = T.concat([left * mv, flat], axis=-1)
        q = T.div(T.relu(cat) + 1.0, T.exp(T.neg(T.clip(cat, -0.5, 0.5))) + 1.0)
        return T.mean(T.log(q + 1.0)) + T.sum(T.sum(T.sigmoid(cat), axis=-1))

    grads = analytic_grad(f, params)
    for p, g in zip(params, grads):
        assert rel_err(g, numeric_grad(lambda: f().item(), p.data)) < 1e-5


def test_mlp_identity_and_affine_degenerate():
    x = Tensor([0.3, -1.2, 2.0])
    ident = Layer(Tensor(np.eye(3)), Tensor(np.zeros(3)), "identity")
    np.testing.assert_array_equal(T.mlp_forward([ident], x).data, x.data)
    b = np.array([1.0, -2.0])
    zero = Layer(Tensor(np.zeros((3, 2))), Tensor(b), "identity")
    np.testing.assert_array_equal(T.mlp_forward([zero], x).data, b)


def test_mlp_matches_manual_composition(rng):
    x = rng.normal(size=(4, 6))
    l1 = T.glorot_layer(rng, 6, 5, "relu")
    l2 = T.glorot_layer(rng, 5, 3, "sigmoid")
    l2.bias.data = rng.normal(size=3)
    manual = T.sigmoid(T.add_bias(T.matmul(T.relu(T.add_bias(T.matmul(Tensor(x), l1.weight),
                                                             l1.bias)), l2.weight), l2.bias))
    np.testing.assert_array_equal(T.mlp_forward([l1, l2], x).data, manual.data)


def test_mlp_chain_break(rng):
    layers = [T.glorot_layer(rng, 4, 3, "relu"), T.glorot_layer(rng, 2, 1, "identity")]
    with pytest.raises(DimensionError):
        T.mlp_forward(layers, np.ones(4))


def test_determinism(rng):
    def run():
        r = np.random.default_rng(7)
        layers = [T.glorot_layer(r, 5, 4, "relu"), T.glorot_layer(r, 4, 1, "identity")]
        params = [p for l in layers for p in (l.weight, l.bias)]
        x = r.normal(size=(3, 5))
        grads = analytic_grad(lambda: T.sum(T.mlp_forward(layers, x)), params)
        return T.mlp_forward(layers, x).data, grads

    (o1, g1), (o2, g2) = run(), run()
    assert o1.tobytes() == o2.tobytes()
    assert all(a.tobytes() == b.tobytes() for a, b in zip(g1, g2))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(-5, 5).filter(lambda a: abs(a) > 1e-3))
def test_backward_is_linear_in_loss_scale(seed, scale):
    r = np.random.default_rng(seed)
    layer = T.glorot_layer(r, 3, 2, "softplus")
    x = r.normal(size=(4, 3))
    params = [layer.weight, layer.bias]
    g1 = analytic_grad(lambda: T.sum(T.mlp_forward([layer], x)), params)
    g2 = analytic_grad(lambda: T.sum(T.mlp_forward([layer], x)) * scale, params)
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(b, scale * a, rtol=1e-12, atol=1e-14)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_random_mlp_gradcheck(seed):
    r = np.random.default_rng(seed)
    layers = [T.glorot_layer(r, 4, 6, "softplus"), T.glorot_layer(r, 6, 3, "sigmoid")]
    for l in layers:
        l.bias.data = r.normal(size=l.bias.shape)
    x = r.normal(size=(2, 4))
    params = [p for l in layers for p in (l.weight, l.bias)]

    def f():
        return T.sum(T.mlp_forward(layers, x) * T.mlp_forward(layers, x))

    for p, g in zip(params, analytic_grad(f, params)):
        assert rel_err(g, numeric_grad(lambda: f().item(), p.data)) < 1e-5
