import numpy as np

from planrl.nn import tensor as T
from planrl.nn.gradcheck import compare, fd_gradient_check, run_suite
from planrl.nn.mlp import Mlp


def test_identity_net_has_exactly_zero_error():
    # linear net, integer inputs, power-of-two step: central differences are
    # exact for a quadratic loss, even in floating point
    net = Mlp([2, 2], seed=0, name="id")
    net.weights[0].data = np.eye(2)
    net.biases[0].data = np.zeros(2)
    report = fd_gradient_check(net, np.array([[1.0, 2.0]]), step=2.0 ** -17)
    assert report.max_rel_error == 0.0
    assert report.passed


def test_random_mlp_passes_at_1e_4():
    for seed in (0, 1, 2):
        net = Mlp([4, 8, 8, 3], seed=seed, name=f"n{seed}")
        x = np.random.default_rng(seed).normal(size=(3, 4))
        report = fd_gradient_check(net, x, tolerance=1e-4, step=1e-5)
        assert report.passed, report.per_param


def test_corrupted_backward_rule_is_detected():
    rng = np.random.default_rng(5)
    w = T.Tensor(rng.normal(size=(3, 3)), requires_grad=True, name="w")
    x = T.constant(rng.normal(size=(4, 3)))

    def bad_tanh(a):
        out_data = np.tanh(a.data)

        def bw(g):
            T._accum(a, g)  # deliberately wrong: pretends d tanh/dx = 1

        return T._make(out_data, (a,), bw)

    def loss_fn():
        h = bad_tanh(T.matmul(x, w))
        return T.tsum(T.mul(h, h))

    report = compare(loss_fn, [w], tolerance=1e-4)
    assert not report.passed


def test_suite_smoke_all_cases_pass():
    report = run_suite(seeds=2, tolerance=1e-4)
    assert report.passed, report.worst_by_case
    assert set(report.worst_by_case) >= {
        "linear", "mlp_tanh", "tanh_output", "mse", "gaussian_logprob",
        "entropy", "ppo_surrogate", "consistency_stopgrad", "embedding"}
