import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from oracles import ce_oracle, soft_dice_oracle, soft_miou_oracle, wce_oracle

from pisss.errors import ConfigError
from pisss.losses import (LossConfig, LossTerm, ce_loss, compound_loss,
                          soft_dice_loss, soft_miou_loss, wce_loss)


def rand_instance(seed, C=2, H=4, W=4, dtype=torch.float64):
    rng = np.random.default_rng(seed)
    logits = torch.tensor(rng.normal(size=(1, C, H, W)), dtype=dtype)
    labels = torch.tensor(rng.integers(0, C, size=(1, H, W)), dtype=torch.long)
    return logits, labels


def test_ce_near_zero_for_confident_correct():
    labels = torch.zeros((1, 3, 3), dtype=torch.long)
    logits = torch.zeros((1, 2, 3, 3))
    logits[:, 0] = 50.0
    assert ce_loss(logits, labels).item() < 1e-6


def test_ce_uniform_logits_ln12():
    logits = torch.zeros((1, 12, 4, 4), dtype=torch.float64)
    labels = torch.randint(0, 12, (1, 4, 4))
    assert ce_loss(logits, labels).item() == pytest.approx(math.log(12),
                                                           abs=1e-9)


def test_ce_matches_oracle():
    logits, labels = rand_instance(0)
    expected = ce_oracle(logits[0].numpy(), labels[0].numpy())
    assert ce_loss(logits, labels).item() == pytest.approx(expected, abs=1e-9)


def test_wce_uniform_weights_equals_ce():
    logits, labels = rand_instance(1, C=3)
    ce = ce_loss(logits, labels).item()
    w1 = wce_loss(logits, labels, [1.0, 1.0, 1.0]).item()
    assert w1 == pytest.approx(ce, abs=1e-6)


def test_wce_scale_invariance():
    logits, labels = rand_instance(2, C=3)
    a = wce_loss(logits, labels, [1.0, 2.0, 0.5]).item()
    b = wce_loss(logits, labels, [2.0, 4.0, 1.0]).item()
    assert a == pytest.approx(b, abs=1e-9)


def test_wce_matches_oracle():
    logits, labels = rand_instance(3, C=2)
    expected = wce_oracle(logits[0].numpy(), labels[0].numpy(), [1.0, 3.0])
    assert wce_loss(logits, labels, [1.0, 3.0]).item() == pytest.approx(
        expected, abs=1e-9)


def test_wce_rejects_bad_weights():
    logits, labels = rand_instance(4)
    with pytest.raises(ConfigError):
        wce_loss(logits, labels, [1.0])
    with pytest.raises(ConfigError):
        wce_loss(logits, labels, [1.0, -1.0])


def _onehot_probs(labels, C):
    return torch.nn.functional.one_hot(labels, C).double().permute(0, 3, 1, 2)


def test_soft_losses_perfect_prediction():
    labels = torch.randint(0, 2, (1, 32, 32))
    probs = _onehot_probs(labels, 2)
    assert soft_miou_loss(probs, labels, 1e-6).item() <= 1e-6
    assert soft_dice_loss(probs, labels, 1e-6).item() <= 1e-6


def test_soft_losses_disjoint_prediction():
    labels = torch.zeros((1, 8, 8), dtype=torch.long)
    wrong = torch.ones((1, 8, 8), dtype=torch.long)
    probs = _onehot_probs(wrong, 2)
    assert soft_miou_loss(probs, labels, 1e-6).item() == pytest.approx(1.0,
                                                                       abs=1e-4)
    assert soft_dice_loss(probs, labels, 1e-6).item() == pytest.approx(1.0,
                                                                       abs=1e-4)


def test_soft_losses_match_oracles():
    for seed in range(5):
        logits, labels = rand_instance(seed, C=2)
        probs = torch.softmax(logits, dim=1)
        got = soft_miou_loss(probs, labels, 1e-6).item()
        want = soft_miou_oracle(probs[0].numpy(), labels[0].numpy(), 1e-6)
        assert got == pytest.approx(want, abs=1e-9)
        got = soft_dice_loss(probs, labels, 1e-6).item()
        want = soft_dice_oracle(probs[0].numpy(), labels[0].numpy(), 1e-6)
        assert got == pytest.approx(want, abs=1e-9)


@given(st.integers(0, 10 ** 9), st.integers(2, 4))
@settings(max_examples=40, deadline=None)
def test_soft_losses_bounded(seed, C):
    logits, labels = rand_instance(seed, C=C)
    probs = torch.softmax(logits, dim=1)
    for fn in (soft_miou_loss, soft_dice_loss):
        v = fn(probs, labels, 1e-6).item()
        assert 0.0 <= v <= 1.0
    assert ce_loss(logits, labels).item() >= 0.0


@given(st.integers(0, 10 ** 9))
@settings(max_examples=30, deadline=None)
def test_class_permutation_equivariance(seed):
    C = 3
    logits, labels = rand_instance(seed, C=C)
    perm = torch.tensor([2, 0, 1])
    inv = torch.argsort(perm)
    logits_p = logits[:, perm]
    labels_p = inv[labels]
    cfg = LossConfig((LossTerm("ce"), LossTerm("soft_miou"),
                      LossTerm("soft_dice")))
    a = compound_loss(cfg, logits, labels).item()
    b = compound_loss(cfg, logits_p, labels_p).item()
    assert a == pytest.approx(b, abs=1e-6)
    w = [1.0, 2.0, 3.0]
    wp = [w[int(i)] for i in perm]
    assert wce_loss(logits, labels, w).item() == pytest.approx(
        wce_loss(logits_p, labels_p, wp).item(), abs=1e-6)


def _finite_diff_grad(fn, x, h=1e-6):
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    gflat = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        up = fn(x).item()
        flat[i] = orig - h
        down = fn(x).item()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


@pytest.mark.parametrize("loss_fn", [soft_miou_loss, soft_dice_loss])
def test_soft_loss_gradients_match_finite_differences(loss_fn):
    for seed in range(3):
        logits, labels = rand_instance(seed, C=2)

        def composed(x):
            return loss_fn(torch.softmax(x, dim=1), labels, 1e-6)

        x = logits.clone().requires_grad_(True)
        (analytic,) = torch.autograd.grad(composed(x), x)
        numeric = _finite_diff_grad(composed, logits.clone())
        denom = numeric.abs().max().item()
        rel = (analytic - numeric).abs().max().item() / max(denom, 1e-12)
        assert rel < 1e-4


def test_compound_single_ce_term():
    logits, labels = rand_instance(7, C=3)
    cfg = LossConfig((LossTerm("ce"),))
    assert compound_loss(cfg, logits, labels).item() == pytest.approx(
        ce_loss(logits, labels).item(), abs=1e-12)


def test_compound_additivity():
    logits, labels = rand_instance(8, C=3)
    probs = torch.softmax(logits, dim=1)
    cfg = LossConfig((LossTerm("ce"), LossTerm("soft_dice")))
    want = ce_loss(logits, labels).item() + \
        soft_dice_loss(probs, labels, 1e-6).item()
    assert compound_loss(cfg, logits, labels).item() == pytest.approx(
        want, abs=1e-9)


def test_compound_validates():
    with pytest.raises(ConfigError):
        LossConfig((LossTerm("focal"),)).validate()
    with pytest.raises(ConfigError):
        LossConfig((LossTerm("ce", 0.0),)).validate()
    with pytest.raises(ConfigError):
        LossConfig((LossTerm("ce"),), epsilon=0.0).validate()
    logits, labels = rand_instance(9)
    with pytest.raises(ConfigError):
        compound_loss(LossConfig((LossTerm("wce"),)), logits, labels)


def test_loss_config_roundtrip():
    cfg = LossConfig((LossTerm("ce"), LossTerm("soft_dice", 0.5)),
                     class_weights=(1.0, 2.0), epsilon=1e-5).validate()
    assert LossConfig.from_dict(cfg.to_dict()) == cfg


def test_shape_mismatch_rejected():
    logits = torch.zeros((1, 2, 4, 4))
    labels = torch.zeros((1, 4, 5), dtype=torch.long)
    with pytest.raises(ConfigError):
        ce_loss(logits, labels)
