import numpy as np
import pytest

from microfacies.architectures import ArchScale, build_network
from microfacies.errors import DimensionError, StateError
from microfacies.network import extract_features, forward_to, network_backward, network_forward, node_output_shape


@pytest.fixture
def net(fp64):
    return build_network("vgg16", ArchScale(16, 1 / 16, 1), n_classes=3, seed=0)


def test_initialize_is_seed_deterministic(fp64):
    a = build_network("resnet_v1", ArchScale(16, 1 / 16, 1), 3, seed=5)
    b = build_network("resnet_v1", ArchScale(16, 1 / 16, 1), 3, seed=5)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_uninitialized_forward_is_state_error():
    net = build_network("vgg16", ArchScale(16, 1 / 16, 1), 3, materialize=False)
    with pytest.raises(StateError):
        network_forward(net, np.zeros((1, 3, 16, 16)))


def test_input_shape_checked(net):
    with pytest.raises(DimensionError):
        network_forward(net, np.zeros((1, 3, 17, 16)))


def test_backward_needs_fresh_cache(net, rng):
    x = rng.normal(size=(2, 3, 16, 16))
    logits, cache = network_forward(net, x, "infer")
    assert cache is None
    with pytest.raises(StateError):
        network_backward(net, cache, logits)
    logits, cache = network_forward(net, x, "train")
    network_backward(net, cache, np.ones_like(logits))
    with pytest.raises(StateError):
        network_backward(net, cache, np.ones_like(logits))


def test_frozen_parameters_absent_from_gradients(net, rng):
    net.freeze(["conv1"])
    logits, cache = network_forward(net, rng.normal(size=(2, 3, 16, 16)), "train")
    grads = network_backward(net, cache, np.ones_like(logits))
    assert not any(n.startswith("conv1.") for n in grads)
    with pytest.raises(ValueError):
        net.freeze(["nonexistent"])


def test_forward_to_and_features(net, rng):
    x = rng.normal(size=(3, 3, 16, 16))
    act = forward_to(net, x, "conv5")
    assert act.shape == (3,) + node_output_shape(net, "conv5")
    feats = extract_features(net, x, "conv5")
    np.testing.assert_allclose(feats, act.mean(axis=(2, 3)))
    with pytest.raises(ValueError):
        extract_features(net, x, "fc6")
