"""The network engine against naive re-implementations and finite differences."""

import numpy as np
import pytest

from oracles import central_diff, fd_hessian, naive_h

from symplearn.memory import METER
from symplearn.model import (HamiltonianNet, costate_to_direction,
                             load_checkpoint, param_count, save_checkpoint)


@pytest.fixture(autouse=True)
def balanced_meter():
    METER.reset()
    yield
    assert METER.live_bytes == 0, "an engine call leaked tracked buffers"


def test_param_count_default_arch():
    # hand count for (2, 16, 32, 16, 1):
    # 2*16+16 + 16*32+32 + 32*16+16 + 16*1+1 = 48 + 544 + 528 + 17
    assert param_count((2, 16, 32, 16, 1)) == 1137
    assert HamiltonianNet(1).n_params == 1137
    assert param_count((2, 1)) == 3


def test_value_matches_naive_reference():
    rng = np.random.default_rng(10)
    for dim, hidden in ((1, (16, 32, 16)), (2, (5, 3))):
        net = HamiltonianNet(dim, hidden=hidden)
        theta = rng.standard_normal(net.n_params)
        for _ in range(5):
            point = rng.uniform(-1.5, 1.5, size=2 * dim)
            got = net.eval_h(theta, point)
            want = naive_h(theta, net.arch, point)
            assert abs(got - want) <= 1e-12 * max(1.0, abs(want))


def test_single_point_and_batch_agree():
    # not bitwise: BLAS may pick different kernels for 1-row and 7-row
    # products, so only near-equality is promised across batch shapes
    net = HamiltonianNet(1)
    theta = net.init_params(3)
    rng = np.random.default_rng(11)
    batch = rng.uniform(-1, 1, size=(7, 2))
    vals = net.eval_h(theta, batch)
    grads = net.grad_state(theta, batch)
    for i in range(7):
        assert abs(net.eval_h(theta, batch[i]) - vals[i]) <= 1e-13
        assert np.max(np.abs(net.grad_state(theta, batch[i]) - grads[i])) <= 1e-13


def test_init_params_bounds_and_determinism():
    net = HamiltonianNet(2, hidden=(8, 8))
    a = net.init_params(42)
    b = net.init_params(42)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, net.init_params(43))
    for (w, bias), n_in in zip(net.unpack(a), net.arch[:-1]):
        assert np.all(np.abs(w) <= 1.0 / np.sqrt(n_in))
        assert np.all(bias == 0.0)


def test_grad_state_matches_finite_differences():
    net = HamiltonianNet(1)
    theta = net.init_params(1)
    rng = np.random.default_rng(12)
    for _ in range(10):
        point = rng.uniform(-1.5, 1.5, size=2)
        want = central_diff(lambda x: net.eval_h(theta, x), point, eps=1e-6)
        got = net.grad_state(theta, point)
        scale = max(1.0, float(np.max(np.abs(want))))
        assert np.max(np.abs(got - want)) <= 1e-8 * scale


def test_dynamics_rearranges_the_gradient():
    net = HamiltonianNet(2, hidden=(6,))
    theta = net.init_params(5)
    rng = np.random.default_rng(13)
    y = rng.uniform(-1, 1, size=(4, 4))
    g = net.grad_state(theta, y)
    f = net.dynamics(theta, y)
    assert np.array_equal(f[:, :2], g[:, 2:])
    assert np.array_equal(f[:, 2:], -g[:, :2])


def test_hessian_matches_finite_differences_and_is_symmetric():
    net = HamiltonianNet(1, hidden=(8, 8))
    theta = net.init_params(2)
    rng = np.random.default_rng(14)
    for _ in range(5):
        point = rng.uniform(-1, 1, size=2)
        got = net.hess_state(theta, point)
        want = fd_hessian(lambda x: net.eval_h(theta, x), point, eps=1e-4)
        assert np.max(np.abs(got - want)) <= 1e-5
        assert np.max(np.abs(got - got.T)) <= 1e-10


def test_hess_blocks_partition_the_hessian():
    net = HamiltonianNet(2, hidden=(5,))
    theta = net.init_params(8)
    y = np.array([0.1, -0.2, 0.3, 0.4])
    hqq, hqp, hpq, hpp = net.hess_blocks(theta, y)
    full = net.hess_state(theta, y)
    assert np.array_equal(np.block([[hqq, hqp], [hpq, hpp]]), full)


def test_costate_to_direction_layout():
    lam = np.array([1.0, 2.0, 3.0, 4.0])
    assert np.array_equal(costate_to_direction(lam, 2), [-3.0, -4.0, 1.0, 2.0])
    batch = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(costate_to_direction(batch, 1), [[-2.0, 1.0], [-4.0, 3.0]])


def test_linear_net_parameter_contraction_is_exact():
    # with no hidden layer H = w0 q + w1 p + b, so f = (w1, -w0) and
    # <lam, f> = lam_q w1 - lam_p w0: the theta gradient is (-lam_p, lam_q, 0)
    net = HamiltonianNet(1, hidden=())
    theta = np.array([0.7, -1.3, 0.25])
    y = np.array([[0.4, 0.9]])
    lam = np.array([[2.0, -3.0]])
    got = net.vjp_params(theta, y, lam)
    assert np.array_equal(got, [3.0, 2.0, 0.0])


def test_vjp_params_matches_finite_differences():
    net = HamiltonianNet(1, hidden=(4,))
    rng = np.random.default_rng(15)
    theta = net.init_params(6)
    y = rng.uniform(-1, 1, size=(3, 2))
    lam = rng.standard_normal((3, 2))

    def contraction(th):
        return float(np.sum(lam * net.dynamics(th, y)))

    want = central_diff(contraction, theta, eps=1e-6)
    got = net.vjp_params(theta, y, lam)
    scale = max(1.0, float(np.max(np.abs(want))))
    assert np.max(np.abs(got - want)) <= 1e-7 * scale


def test_vjp_params_sums_over_batch():
    net = HamiltonianNet(1, hidden=(5,))
    rng = np.random.default_rng(16)
    theta = net.init_params(7)
    y = rng.uniform(-1, 1, size=(4, 2))
    lam = rng.standard_normal((4, 2))
    whole = net.vjp_params(theta, y, lam)
    parts = sum(net.vjp_params(theta, y[i:i + 1], lam[i:i + 1]) for i in range(4))
    assert np.max(np.abs(whole - parts)) <= 1e-12 * max(1.0, np.max(np.abs(whole)))


def test_field_vjp_equals_hessian_contraction():
    net = HamiltonianNet(1, hidden=(6,))
    rng = np.random.default_rng(17)
    theta = net.init_params(9)
    y = rng.uniform(-1, 1, size=(3, 2))
    u = rng.standard_normal((3, 2))
    layers = net.unpack(theta)
    acts = net._forward(layers, y)
    ybar, _ = net.field_vjp(layers, acts, u, need_params=False)
    net._drop(acts)
    hess = net.hess_state(theta, y)
    w = costate_to_direction(u, 1)
    want = np.einsum("bij,bj->bi", hess, w)
    assert np.max(np.abs(ybar - want)) <= 1e-12


def test_methods_are_pure():
    net = HamiltonianNet(1)
    theta = net.init_params(0)
    y = np.array([[0.3, -0.4], [0.1, 0.2]])
    y_copy = y.copy()
    theta_copy = theta.copy()
    first = (net.eval_h(theta, y), net.grad_state(theta, y), net.hess_state(theta, y))
    second = (net.eval_h(theta, y), net.grad_state(theta, y), net.hess_state(theta, y))
    for a, b in zip(first, second):
        assert np.array_equal(a, b)
    assert np.array_equal(y, y_copy)
    assert np.array_equal(theta, theta_copy)


def test_bad_shapes_are_rejected():
    net = HamiltonianNet(1)
    theta = net.init_params(0)
    with pytest.raises(ValueError):
        net.eval_h(theta, np.zeros(3))
    with pytest.raises(ValueError):
        net.eval_h(theta[:-1], np.zeros(2))
    with pytest.raises(ValueError):
        net.vjp_params(theta, np.zeros((2, 2)), np.zeros((3, 2)))


def test_checkpoint_roundtrip(tmp_path):
    net = HamiltonianNet(1, hidden=(4, 4))
    theta = net.init_params(21)
    header, binary = save_checkpoint(tmp_path / "model.json", net, theta, seed=21)
    loaded_net, loaded_theta, header_dict = load_checkpoint(header)
    assert loaded_net.arch == net.arch
    assert np.array_equal(loaded_theta, theta)
    assert header_dict["seed"] == 21
    assert binary.exists()


def test_checkpoint_rejects_corruption(tmp_path):
    net = HamiltonianNet(1, hidden=(4,))
    theta = net.init_params(1)
    header, binary = save_checkpoint(tmp_path / "m.json", net, theta, seed=1)

    data = binary.read_bytes()
    binary.write_bytes(data[:-8])
    with pytest.raises(ValueError):
        load_checkpoint(header)
    binary.write_bytes(data)

    import json
    hd = json.loads(header.read_text())
    hd["format_version"] = 99
    header.write_text(json.dumps(hd))
    with pytest.raises(ValueError):
        load_checkpoint(header)

    hd["format_version"] = 1
    hd["param_count"] = 7
    header.write_text(json.dumps(hd))
    with pytest.raises(ValueError):
        load_checkpoint(header)
