import numpy as np
import pytest

from microfacies import tensor
from microfacies.errors import DimensionError
from microfacies.tensor import SeededRng, matmul, pad2d, center_crop2d, topk_indices


def test_precision_switch_is_scoped():
    before = tensor.get_precision()
    with tensor.precision("fp64"):
        assert tensor.get_dtype() is np.float64
    assert tensor.get_precision() == before


def test_unknown_precision_rejected():
    with pytest.raises(ValueError):
        tensor.set_precision("fp16")


def test_seeded_streams_reproducible_and_independent():
    a = SeededRng(7, "init", "w").normal((5,))
    b = SeededRng(7, "init", "w").normal((5,))
    c = SeededRng(7, "init", "v").normal((5,))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_spawn_matches_direct_keys():
    assert np.array_equal(SeededRng(3, "x").spawn("y").random((4,)), SeededRng(3, "x", "y").random((4,)))


def test_uniform_and_normal_domain_checks():
    r = SeededRng(0)
    with pytest.raises(ValueError):
        r.uniform((2,), 1.0, 1.0)
    with pytest.raises(ValueError):
        r.normal((2,), 0.0, 0.0)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        matmul(np.ones((2, 3)), np.ones((4, 5)))


def test_pad_then_crop_roundtrip(rng):
    x = rng.normal(size=(2, 3, 4, 5))
    assert np.array_equal(center_crop2d(pad2d(x, (1, 2)), (1, 2)), x)


def test_topk_orders_descending_with_stable_ties():
    assert topk_indices([0.2, 0.5, 0.5, 0.1], 3) == [1, 2, 0]
    with pytest.raises(ValueError):
        topk_indices([1.0, 2.0], 3)
