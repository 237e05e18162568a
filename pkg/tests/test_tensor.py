import numpy as np
import pytest

from planrl.errors import UsageError
from planrl.nn import tensor as T


def fd(loss_fn, param, step=1e-6):
    """Straight-line central differences, independent of the tape."""
    base = param.data.copy()
    flat = base.ravel()
    out = np.zeros_like(flat)
    for j in range(flat.size):
        saved = flat[j]
        flat[j] = saved + step
        param.data = flat.reshape(base.shape)
        fp = float(loss_fn().data)
        flat[j] = saved - step
        param.data = flat.reshape(base.shape)
        fm = float(loss_fn().data)
        flat[j] = saved
        out[j] = (fp - fm) / (2.0 * step)
    param.data = base
    return out.reshape(base.shape)


def grads_of(loss_fn, params):
    with T.Tape() as tape:
        loss = loss_fn()
    return T.backward(tape, loss, params)


def test_square_at_three():
    x = T.Tensor(np.array(3.0), requires_grad=True)
    g = grads_of(lambda: T.mul(x, x), [x])
    assert float(g[x]) == 6.0


def test_unreachable_param_gets_exact_zero():
    x = T.Tensor(np.array(2.0), requires_grad=True)
    y = T.Tensor(np.array(5.0), requires_grad=True)
    g = grads_of(lambda: T.mul(x, x), [x, y])
    assert float(g[x]) == 4.0
    assert g[y].shape == y.data.shape
    assert np.all(g[y] == 0.0)


def test_loss_must_be_scalar():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with T.Tape() as tape:
        out = T.mul(x, x)
    with pytest.raises(UsageError):
        T.backward(tape, out, [x])


def test_mixed_op_graph_matches_finite_differences():
    rng = np.random.default_rng(7)
    w = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True, name="w")
    b = T.Tensor(rng.normal(size=4), requires_grad=True, name="b")
    table = T.Tensor(rng.normal(size=(2, 3)), requires_grad=True, name="tab")
    x = T.constant(rng.normal(size=(5, 3)))
    ids = np.array([0, 1, 1, 0, 1])

    def loss_fn():
        e = T.gather_rows(table, ids)
        both = T.concat([x, e], axis=1)  # 6 columns; take a span crossing the seam
        h = T.tanh(T.add(T.matmul(T.slice_cols(both, 1, 4), w), b))
        p = T.exp(T.clip(h, -0.9, 0.9))
        q = T.log(T.add(p, T.constant(2.0)))
        r = T.div(q, T.constant(np.full(4, 3.0)))
        s = T.minimum(r, T.maximum(T.neg(r), T.mul(r, T.constant(0.5))))
        return T.tmean(T.tsum(T.mul(s, s), axis=1))

    grads = grads_of(loss_fn, [w, b, table])
    for p in (w, b, table):
        num = fd(loss_fn, p)
        assert np.allclose(grads[p], num, rtol=1e-4, atol=1e-7), p.name


def test_broadcast_bias_gradient_sums_over_batch():
    b = T.Tensor(np.zeros(3), requires_grad=True)
    x = T.constant(np.arange(6.0).reshape(2, 3))
    g = grads_of(lambda: T.tsum(T.add(x, b)), [b])
    assert np.array_equal(g[b], np.array([2.0, 2.0, 2.0]))


def test_minimum_tie_routes_to_first_operand():
    a = T.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = T.Tensor(np.array([1.0, 5.0]), requires_grad=True)
    g = grads_of(lambda: T.tsum(T.minimum(a, b)), [a, b])
    assert np.array_equal(g[a], np.array([1.0, 1.0]))
    assert np.array_equal(g[b], np.array([0.0, 0.0]))


def test_clip_gradient_zero_outside_interval():
    x = T.Tensor(np.array([-2.0, 0.5, 3.0]), requires_grad=True)
    g = grads_of(lambda: T.tsum(T.clip(x, -1.0, 1.0)), [x])
    assert np.array_equal(g[x], np.array([0.0, 1.0, 0.0]))


def test_detach_blocks_gradient():
    x = T.Tensor(np.array(2.0), requires_grad=True)
    g = grads_of(lambda: T.mul(x.detach(), x), [x])
    assert float(g[x]) == 2.0  # only the live factor contributes


def test_gather_rows_untouched_row_zero():
    tab = T.Tensor(np.ones((4, 2)), requires_grad=True)
    g = grads_of(lambda: T.tsum(T.gather_rows(tab, np.array([0, 0, 2]))), [tab])
    expect = np.array([[2.0, 2.0], [0.0, 0.0], [1.0, 1.0], [0.0, 0.0]])
    assert np.array_equal(g[tab], expect)


def test_everything_is_float64():
    x = T.Tensor(np.array([1, 2], dtype=np.int32), requires_grad=True)
    y = T.tanh(T.mul(x, T.constant(0.5)))
    assert x.data.dtype == np.float64
    assert y.data.dtype == np.float64
    g = grads_of(lambda: T.tsum(T.mul(x, x)), [x])
    assert g[x].dtype == np.float64


def test_two_backward_passes_are_identical():
    rng = np.random.default_rng(3)
    w = T.Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    x = T.constant(rng.normal(size=(3, 2)))
    with T.Tape() as tape:
        loss = T.tmean(T.mul(T.matmul(x, w), T.matmul(x, w)))
    g1 = T.backward(tape, loss, [w])[w].copy()
    g2 = T.backward(tape, loss, [w])[w]
    assert np.array_equal(g1, g2)


def test_forward_identical_with_and_without_tape():
    rng = np.random.default_rng(11)
    w = T.Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    x = T.constant(rng.normal(size=(4, 3)))
    with T.Tape():
        taped = T.tanh(T.matmul(x, w)).data.copy()
    untaped = T.tanh(T.matmul(x, w)).data
    assert np.array_equal(taped, untaped)


def test_tape_records_in_topological_order():
    x = T.Tensor(np.array(1.5), requires_grad=True)
    with T.Tape() as tape:
        a = T.mul(x, x)
        b = T.exp(a)
        c = T.add(a, b)
        T.log(c)
    seen = set()
    for node in tape._nodes:
        for parent in node._parents:
            assert parent is x or parent in seen
        seen.add(node)


def test_ops_outside_tape_record_nothing():
    x = T.Tensor(np.array(2.0), requires_grad=True)
    y = T.mul(x, x)
    assert y._backward is None and y._parents == ()
