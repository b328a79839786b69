import os
import struct

import numpy as np
import pytest

from microfacies.architectures import ArchScale, build_network
from microfacies.errors import DimensionError, FormatError
from microfacies.network import network_backward, network_forward
from microfacies.optim import OptimizerState, cross_entropy_loss, optimizer_step
from microfacies.transfer import (FreezePolicy, apply_freeze_policy, checkpoint_bytes, load_checkpoint,
                                  load_pretrained, parse_checkpoint, restore_state, save_checkpoint)

SCALE = ArchScale(16, 1 / 16, 1)


def train_steps(net, steps, opt=None, seed=0):
    opt = opt or OptimizerState("adam")
    r = np.random.default_rng(seed)
    for _ in range(steps):
        x = r.normal(size=(4,) + net.input_shape)
        y = r.integers(0, net.n_classes, 4)
        logits, cache = network_forward(net, x, "train")
        grads = network_backward(net, cache, cross_entropy_loss(logits, y)[1])
        optimizer_step(net.params, grads, opt, 1e-2, frozen=net.frozen)
    return opt


def test_roundtrip_bitwise_with_optimizer(tmp_path):
    net = build_network("resnet_v1", SCALE, 4)
    opt = train_steps(net, 2)
    save_checkpoint(net, opt, {"epoch": 7}, tmp_path / "c.ckpt")
    ck = load_checkpoint(tmp_path / "c.ckpt")
    assert ck.arch == "resnet_v1" and ck.metadata["epoch"] == 7
    assert all(np.array_equal(ck.tensors[k], v) and ck.tensors[k].dtype == v.dtype for k, v in net.state().items())
    assert ck.optimizer.step == opt.step and ck.optimizer.variant == "adam"
    assert all(np.array_equal(ck.optimizer.moments[k], v) for k, v in opt.moments.items())


def test_file_size_accounting():
    tensors = {"w": np.zeros((10, 100), np.float32)}
    data = checkpoint_bytes("vgg16", tensors, {})
    header = 4 + 4 + (4 + 5) + (4 + 2) + 4
    per_tensor = 4 + 1 + 1 + 1 + 2 * 8
    assert len(data) == header + per_tensor + 4000 + 1


def test_corruptions_rejected():
    good = checkpoint_bytes("vgg16", {"w": np.ones(3)}, {"a": 1})
    with pytest.raises(FormatError) as e:
        parse_checkpoint(b"XXXX" + good[4:])
    assert e.value.field == "magic"
    bumped = good[:4] + struct.pack("<I", 2) + good[8:]
    with pytest.raises(FormatError) as e:
        parse_checkpoint(bumped)
    assert e.value.field == "version"
    with pytest.raises(FormatError):
        parse_checkpoint(good[:-5])
    with pytest.raises(FormatError):
        parse_checkpoint(good + b"\x00")


def test_resume_optimizer_equivalence(tmp_path):
    a = build_network("vgg16", SCALE, 3, seed=1)
    opt = train_steps(a, 3, seed=0)
    save_checkpoint(a, opt, {}, tmp_path / "mid.ckpt")
    train_steps(a, 1, opt, seed=9)
    ck = load_checkpoint(tmp_path / "mid.ckpt")
    b = build_network("vgg16", SCALE, 3, seed=99)
    restore_state(b, ck)
    train_steps(b, 1, ck.optimizer, seed=9)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_pretrained_head_replacement(tmp_path):
    src = build_network("inception_resnet_v2", SCALE, 10, seed=1)
    save_checkpoint(src, None, {}, tmp_path / "p.ckpt")
    dst = build_network("inception_resnet_v2", SCALE, 4, seed=2)
    rep = load_pretrained(dst, load_checkpoint(tmp_path / "p.ckpt"), strict=True)
    assert set(rep.reinitialized) == {"logits.dense.weight", "logits.dense.bias"}
    assert not rep.skipped
    assert set(rep.loaded) | set(rep.reinitialized) == set(dst.state())
    assert all(np.array_equal(dst.params[k], src.params[k]) for k in rep.loaded if k in src.params)


def test_identical_architecture_loads_everything(tmp_path):
    src = build_network("vgg16", SCALE, 3, seed=1)
    save_checkpoint(src, None, {}, tmp_path / "p.ckpt")
    rep = load_pretrained(build_network("vgg16", SCALE, 3, seed=2), load_checkpoint(tmp_path / "p.ckpt"))
    assert len(rep.loaded) == len(src.state()) and not rep.skipped and not rep.reinitialized


def test_strict_body_mismatch(tmp_path):
    src = build_network("vgg16", SCALE, 3)
    ck = load_checkpoint_from(src, tmp_path)
    ck.tensors["conv1.conv1_1.conv.weight"] = np.zeros((1, 1, 1, 1), np.float32)
    with pytest.raises(DimensionError, match="conv1.conv1_1.conv.weight"):
        load_pretrained(build_network("vgg16", SCALE, 3), ck, strict=True)
    rep = load_pretrained(build_network("vgg16", SCALE, 3), ck, strict=False)
    assert rep.skipped == ["conv1.conv1_1.conv.weight"]


def load_checkpoint_from(net, tmp_path):
    save_checkpoint(net, None, {}, tmp_path / "x.ckpt")
    return load_checkpoint(tmp_path / "x.ckpt")


def test_freeze_policies():
    net = build_network("vgg16", SCALE, 3)
    apply_freeze_policy(net, FreezePolicy("half_layers"))
    assert {n.split(".")[0] for n in net.trainable_names()} == {"conv4", "conv5", "fc6", "fc7", "fc8"}
    ir = build_network("inception_resnet_v2", SCALE, 3)
    apply_freeze_policy(ir, FreezePolicy("last_layer"))
    assert set(ir.trainable_names()) == {"logits.dense.weight", "logits.dense.bias"}
    assert apply_freeze_policy(ir, FreezePolicy("all_layers")) == 0
    with pytest.raises(ValueError):
        apply_freeze_policy(ir, FreezePolicy("none_frozen", ("nope",)))
    with pytest.raises(ValueError):
        FreezePolicy("some_layers")


@pytest.mark.parametrize("variant", ["all_layers", "half_layers", "last_layer"])
def test_frozen_parameters_bitwise_invariant(variant):
    net = build_network("resnet_v1", SCALE, 3)
    apply_freeze_policy(net, FreezePolicy(variant))
    before = {k: v.copy() for k, v in net.params.items()}
    train_steps(net, 10)
    assert all(np.array_equal(before[k], net.params[k]) for k in net.frozen)
    assert any(not np.array_equal(before[k], net.params[k]) for k in net.trainable_names())
