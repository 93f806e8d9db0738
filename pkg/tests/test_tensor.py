import numpy as np
import pytest

from roomsdf import tensor as T
from helpers import check_param_grads, numeric_grad_entries, rel_err


def tape_grad(build, *params):
    for p in params:
        p.zero_grad()
    tape = T.Tape()
    with tape:
        loss = build()
    tape.backward(loss)
    return [p.grad.copy() for p in params]


def test_matmul_scalar_product():
    a = T.Tensor([[2.0]])
    b = T.Tensor([[3.0]])
    assert T.matmul(a, b).values[0, 0] == 6.0


def test_sigmoid_at_zero():
    assert T.sigmoid(T.Tensor([0.0])).values[0] == 0.5


def test_bilinear_gather_exact_node():
    plane = T.Tensor(np.arange(18.0).reshape(3, 3, 2))
    out = T.plane_gather(plane, np.array([[1.0, 2.0]]))
    assert np.array_equal(out.values[0], plane.values[1, 2])


def test_backward_bilinear_form():
    w = T.Tensor([[2.0]], requires_grad=True)
    x = T.Tensor([[3.0]], requires_grad=True)
    gw, gx = tape_grad(lambda: T.sum_(w * x), w, x)
    assert gw[0, 0] == 3.0
    assert gx[0, 0] == 2.0


def test_backward_sigmoid_prime():
    w = T.Tensor([0.0], requires_grad=True)
    (gw,) = tape_grad(lambda: T.sum_(T.sigmoid(w)), w)
    assert gw[0] == pytest.approx(0.25, abs=1e-12)


def test_backward_requires_scalar():
    w = T.Tensor([1.0, 2.0], requires_grad=True)
    tape = T.Tape()
    with tape:
        out = w * 2.0
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(out)


def test_backward_three_layer_network_matches_fd():
    rng = np.random.default_rng(7)
    store = T.ParamStore()
    dims = [5, 8, 6, 1]
    for i in range(3):
        store.register(f"w{i}", rng.normal(0, 0.5, (dims[i], dims[i + 1])))
        store.register(f"b{i}", rng.normal(0, 0.1, dims[i + 1]))
    x = T.Tensor(rng.normal(0, 1, (4, 5)))

    def loss():
        h = x
        for i in range(3):
            h = T.matmul(h, store[f"w{i}"]) + store[f"b{i}"]
            if i < 2:
                h = T.softplus(h, beta=10.0)
        return T.mean_(T.square(h))

    check_param_grads(loss, store, rng, n_entries=6)


def test_grad_accumulates_across_backward_calls():
    w = T.Tensor([2.0], requires_grad=True)
    w.zero_grad()
    for _ in range(2):
        tape = T.Tape()
        with tape:
            loss = T.sum_(T.square(w))
        tape.backward(loss)
    assert w.grad[0] == pytest.approx(8.0)


def test_zero_grads_idempotent_and_exact():
    store = T.ParamStore()
    w = store.register("w", [1.0, -2.0])
    tape = T.Tape()
    with tape:
        loss = T.sum_(T.square(w))
    tape.backward(loss)
    assert np.any(w.grad != 0)
    T.zero_grads(store)
    assert np.array_equal(w.grad, np.zeros(2))
    T.zero_grads(store)
    assert np.array_equal(w.grad, np.zeros(2))


def test_zero_grads_then_backward_matches_single_run():
    store = T.ParamStore()
    w = store.register("w", [0.3, -1.1, 0.7])

    def run():
        tape = T.Tape()
        with tape:
            loss = T.mean_(T.square(T.sigmoid(w)))
        tape.backward(loss)
        return w.grad.copy()

    first = run()
    store.zero_grads()
    second = run()
    assert np.array_equal(first, second)


def test_shape_mismatch_names_both_shapes():
    a = T.Tensor(np.zeros((2, 3)))
    b = T.Tensor(np.zeros((4, 5)))
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 5\)"):
        T.add(a, b)
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(a, b)


def test_no_rank_promotion_accident():
    a = T.Tensor(np.zeros(4))
    b = T.Tensor(np.zeros((4, 1)))
    with pytest.raises(ValueError):
        T.mul(a, b)


def test_relu_subgradient_zero_at_zero():
    w = T.Tensor([-1.0, 0.0, 2.0], requires_grad=True)
    (g,) = tape_grad(lambda: T.sum_(T.relu(w)), w)
    assert np.array_equal(g, [0.0, 0.0, 1.0])


def test_clamp_min_blocks_gradient_when_clamped():
    w = T.Tensor([0.5, 2.0], requires_grad=True)
    (g,) = tape_grad(lambda: T.sum_(T.clamp_min(w, 1.0)), w)
    assert np.array_equal(g, [0.0, 1.0])


def test_bilinear_gather_partition_of_unity():
    rng = np.random.default_rng(3)
    for _ in range(20):
        plane = T.Tensor(rng.normal(0, 1, (6, 6, 3)), requires_grad=True)
        plane.zero_grad()
        uv = rng.uniform(0, 5, (10, 2))
        upstream = rng.normal(0, 1, (10, 3))
        tape = T.Tape()
        with tape:
            out = T.plane_gather(plane, uv)
            loss = T.sum_(out * T.Tensor(upstream))
        tape.backward(loss)
        # per channel, deposited gradient mass equals summed upstream grad
        assert np.allclose(plane.grad.sum(axis=(0, 1)), upstream.sum(axis=0),
                           atol=1e-12)


def test_exclusive_cumprod_matches_running_product():
    rng = np.random.default_rng(11)
    x = rng.uniform(0.1, 1.0, (4, 7))
    out = T.exclusive_cumprod(T.Tensor(x), axis=1).values
    for r in range(4):
        running = 1.0
        for i in range(7):
            assert out[r, i] == running
            running = running * x[r, i]


def test_exclusive_cumprod_gradient_fd():
    rng = np.random.default_rng(13)
    store = T.ParamStore()
    x = store.register("x", rng.uniform(0.2, 1.0, (3, 5)))
    coeff = T.Tensor(rng.normal(0, 1, (3, 5)))

    def loss():
        return T.sum_(T.exclusive_cumprod(x, axis=1) * coeff)

    check_param_grads(loss, store, rng, n_entries=8)


def test_gather_rows_and_scatter_grad():
    table = T.Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    table.zero_grad()
    idx = np.array([1, 1, 3])
    tape = T.Tape()
    with tape:
        rows = T.gather_rows(table, idx)
        loss = T.sum_(rows)
    assert np.array_equal(rows.values, table.values[idx])
    tape.backward(loss)
    expected = np.zeros((4, 3))
    expected[1] = 2.0
    expected[3] = 1.0
    assert np.array_equal(table.grad, expected)


def test_gather_rows_out_of_range():
    table = T.Tensor(np.zeros((4, 3)))
    with pytest.raises(IndexError):
        T.gather_rows(table, np.array([4]))


def test_debug_checks_flag_raises_on_nan():
    T.set_debug_checks(True)
    try:
        a = T.Tensor([1.0, 0.0])
        with pytest.raises(FloatingPointError, match="div"):
            T.div(a, T.Tensor([1.0, 0.0]))
    finally:
        T.set_debug_checks(False)


def test_param_store_rejects_duplicates():
    store = T.ParamStore()
    store.register("w", [1.0])
    with pytest.raises(KeyError):
        store.register("w", [2.0])


OP_CASES = [
    ("add", lambda a, b: T.add(a, b)),
    ("sub", lambda a, b: T.sub(a, b)),
    ("mul", lambda a, b: T.mul(a, b)),
    ("div", lambda a, b: T.div(a, T.add(T.square(b), 0.5))),
    ("matmul", lambda a, b: T.matmul(a, b)),
    ("abs", lambda a, b: T.abs_(T.add(a, 0.3))),
    ("square", lambda a, b: T.square(a)),
    ("sqrt", lambda a, b: T.sqrt_(T.add(T.square(a), 0.1))),
    ("sigmoid", lambda a, b: T.sigmoid(a)),
    ("softplus", lambda a, b: T.softplus(a, beta=3.0)),
    ("exp", lambda a, b: T.exp_(a)),
    ("concat", lambda a, b: T.concat([a, b], axis=1)),
    ("narrow", lambda a, b: T.narrow(a, 1, 1, 2)),
    ("reshape", lambda a, b: T.reshape(a, (2, 8))),
    ("mean", lambda a, b: T.mean_(a, axis=0, keepdims=True)),
    ("cumprod", lambda a, b: T.exclusive_cumprod(T.add(T.square(a), 0.2), axis=1)),
]


@pytest.mark.parametrize("name,fn", OP_CASES)
def test_op_gradients_match_fd_over_many_seeds(name, fn):
    """Reverse-mode vs central differences, >= 100 seeds across the suite."""
    for seed in range(8):
        rng = np.random.default_rng(1000 + seed)
        store = T.ParamStore()
        a = store.register("a", rng.normal(0, 1.0, (4, 4)))
        b = store.register("b", rng.normal(0, 1.0, (4, 4)))
        mixer = T.Tensor(rng.normal(0, 1.0, 1))

        def loss():
            out = fn(a, b)
            return T.mean_(T.square(out)) * mixer

        check_param_grads(loss, store, rng, n_entries=3)


def test_plane_gather_gradient_fd():
    for seed in range(6):
        rng = np.random.default_rng(50 + seed)
        store = T.ParamStore()
        plane = store.register("p", rng.normal(0, 1, (5, 5, 2)))
        uv = rng.uniform(0, 4, (7, 2))
        coeff = T.Tensor(rng.normal(0, 1, (7, 2)))

        def loss():
            return T.sum_(T.plane_gather(plane, uv) * coeff)

        check_param_grads(loss, store, rng, n_entries=6)


def test_fd_helper_sanity():
    # the oracle itself: d/dx of x^2 at 3 is 6
    p = T.Tensor(np.array([3.0]), requires_grad=True)
    num = numeric_grad_entries(lambda: float(p.values[0] ** 2), p, [0])
    assert rel_err(num, [6.0]).max() < 1e-8
