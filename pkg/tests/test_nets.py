import numpy as np
import pytest

from flowtopo import autodiff as ad
from flowtopo.errors import InvalidInputError
from flowtopo.nets import DenseNet
from flowtopo.rng import RngStream

from conftest import assert_grads_match_fd


def test_output_shape_and_param_count():
    net = DenseNet([2, 8, 8, 3], rng=RngStream(0, 2))
    x = np.zeros((5, 2))
    out = net(x)
    assert out.data.shape == (5, 3)
    assert len(net.parameters()) == 6


def test_zero_last_gives_constant_zero_output():
    net = DenseNet([2, 16, 4], rng=RngStream(1, 2), zero_last=True)
    x = RngStream(2, 2).standard_normal((7, 2))
    out = net(x)
    assert np.array_equal(out.data, np.zeros((7, 4)))


def test_glorot_bounds_on_hidden_weights():
    net = DenseNet([3, 10, 2], rng=RngStream(3, 2))
    w = net.weights[0].data
    limit = np.sqrt(6.0 / (3 + 10))
    assert np.all(np.abs(w) <= limit)
    assert np.abs(w).max() > 0.1 * limit  # actually randomized
    assert np.array_equal(net.biases[0].data, np.zeros(10))


def test_sigmoid_head_range():
    net = DenseNet([2, 8, 1], output_activation="sigmoid", rng=RngStream(4, 2))
    x = RngStream(5, 2).standard_normal((50, 2)) * 5
    out = net(x).data
    assert np.all((out > 0) & (out < 1))


def test_input_validation():
    net = DenseNet([2, 4, 1], rng=RngStream(6, 2))
    with pytest.raises(InvalidInputError):
        net(np.zeros((3, 5)))
    with pytest.raises(InvalidInputError):
        DenseNet([2], rng=RngStream(0, 2))
    with pytest.raises(InvalidInputError):
        DenseNet([2, 3], hidden_activation="gelu")
    with pytest.raises(InvalidInputError):
        DenseNet([2, 3], output_activation="softmax")


@pytest.mark.parametrize("act", ["tanh", "relu"])
def test_gradients_match_fd(act):
    rng = RngStream(7, 2)
    net = DenseNet([3, 6, 2], hidden_activation=act, rng=rng)
    x = ad.Tensor(RngStream(8, 2).standard_normal((5, 3)))

    def loss_fn():
        out = net(x)
        return ad.tmean(out * out) + ad.tsum(ad.tsigmoid(out)) * 0.1

    assert_grads_match_fd(loss_fn, net.parameters())


def test_gradient_flows_to_input():
    net = DenseNet([2, 5, 1], rng=RngStream(9, 2))
    x = ad.parameter(RngStream(10, 2).standard_normal((4, 2)))

    def loss_fn():
        return ad.tsum(net(x))

    assert_grads_match_fd(loss_fn, [x])


def test_state_roundtrip():
    net = DenseNet([2, 6, 3], rng=RngStream(11, 2))
    state = net.state_arrays()
    net2 = DenseNet([2, 6, 3])
    net2.load_state_arrays(state)
    x = RngStream(12, 2).standard_normal((4, 2))
    assert np.array_equal(net(x).data, net2(x).data)


def test_state_shape_mismatch_rejected():
    net = DenseNet([2, 6, 3], rng=RngStream(13, 2))
    state = net.state_arrays()
    other = DenseNet([2, 5, 3])
    with pytest.raises(InvalidInputError):
        other.load_state_arrays(state)
