import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sddr.errors import ConfigurationError
from sddr.losses import (
    EXEMPLAR,
    REAL,
    SDDR_MODES,
    SYNTHETIC,
    LucirParams,
    icarl_loss,
    lucir_lambda,
    lucir_loss,
    mode_masks,
)

ORIGINS = np.array([REAL, REAL, EXEMPLAR, EXEMPLAR, SYNTHETIC, SYNTHETIC])
R = np.array([1, 1, 0, 0, 0, 0], bool)
E = np.array([0, 0, 1, 1, 0, 0], bool)
S = np.array([0, 0, 0, 0, 1, 1], bool)

# (classification, distillation) per mode; margin is always exemplars only
EXPECTED = {
    "off": (R | E, R | E),
    "distill": (R | E, R | E | S),
    "distill_wo_new": (R | E, E | S),
    "replay": (R | E | S, R | E),
    "both": (R | E | S, R | E | S),
    "synthetic_memory": (R | E | S, R | E | S),
}


@pytest.mark.parametrize("mode", SDDR_MODES)
def test_mode_mask_matrix(mode):
    cls, dist, margin = mode_masks(mode, ORIGINS, 1)
    assert cls.tolist() == EXPECTED[mode][0].tolist()
    assert dist.tolist() == EXPECTED[mode][1].tolist()
    assert margin.tolist() == E.tolist()


@given(st.sampled_from(SDDR_MODES), arrays(np.int8, st.integers(1, 40), elements=st.sampled_from([0, 1, 2])), st.integers(0, 5))
def test_margin_mask_never_synthetic(mode, origin, t):
    cls, dist, margin = mode_masks(mode, origin, t)
    assert not (margin & (origin == SYNTHETIC)).any()
    if t == 0:
        synth = origin == SYNTHETIC
        assert not (cls & synth).any() and not dist.any() and not margin.any()


def test_unknown_mode_rejected():
    with pytest.raises(ConfigurationError):
        mode_masks("sometimes", ORIGINS, 1)


def test_icarl_two_ln_two():
    old = np.log(np.array([[0.8 / 0.2, 0.3 / 0.7]]))
    lb = icarl_loss(np.zeros((1, 2)), old, np.array([0]), 2, np.zeros(1, bool), np.ones(1, bool))
    assert lb.distillation == pytest.approx(2 * math.log(2), abs=1e-12)


def test_icarl_t0_is_one_hot_bce():
    z = np.array([[1.0, -2.0, 0.5]])
    lb = icarl_loss(z, None, np.array([2]), 0, np.ones(1, bool), np.ones(1, bool))
    target = np.array([0.0, 0.0, 1.0])
    expect = float(np.sum(np.log1p(np.exp(z[0])) - target * z[0]))
    assert lb.total == pytest.approx(expect, abs=1e-12)
    assert lb.distillation == 0.0


def test_icarl_distillation_stationary_at_target():
    rng = np.random.default_rng(0)
    old = rng.normal(size=(4, 3))
    z = np.concatenate([old, rng.normal(size=(4, 2))], axis=1)
    lb = icarl_loss(z, old, np.array([3, 4, 3, 4]), 3, np.zeros(4, bool), np.ones(4, bool))
    assert np.abs(lb.grad_logits[:, :3]).max() < 1e-15


def test_lucir_lambda_example():
    assert lucir_lambda(5.0, 50, 10) == pytest.approx(5 * math.sqrt(5))
    assert lucir_lambda(5.0, 50, 10) == pytest.approx(11.1803, abs=1e-4)


def _lucir_inputs(rng, B=6, D=4, C=5):
    f = rng.normal(size=(B, D))
    W = rng.normal(size=(C, D))
    cos = (f / np.linalg.norm(f, axis=1, keepdims=True)) @ (W / np.linalg.norm(W, axis=1, keepdims=True)).T
    return f, cos


def test_lucir_distillation_zero_when_features_match():
    rng = np.random.default_rng(1)
    f, cos = _lucir_inputs(rng)
    y = np.array([0, 1, 2, 3, 4, 0])
    ones = np.ones(6, bool)
    lb = lucir_loss(f, f.copy(), cos, 10.0, y, ones, ones, np.zeros(6, bool), 3, LucirParams())
    assert lb.distillation == pytest.approx(0.0, abs=1e-10)  # norm guard
    assert lb.extras["lambda"] == pytest.approx(5 * math.sqrt(3 / 2))


def test_lucir_margin_inactive_when_separated():
    cos = np.array([[0.9, 0.0, 0.1, 0.2], [0.1, 0.95, 0.3, 0.0]])
    f = np.ones((2, 3))
    y = np.array([0, 1])
    m = np.ones(2, bool)
    lb = lucir_loss(f, f, cos, 10.0, y, m, m, m, 2, LucirParams(margin=0.5, top_k=2))
    assert lb.margin == 0.0
    assert (lb.grad_cos == 0).all()


def test_lucir_margin_hand_value():
    # anchor cos 0.5, new negatives 0.4 and 0.3: hinge (0.5 - 0.5 + 0.4) + (0.5 - 0.5 + 0.3)
    cos = np.array([[0.5, 0.9, 0.4, 0.3]])
    f = np.ones((1, 2))
    m = np.ones(1, bool)
    lb = lucir_loss(f, f, cos, 10.0, np.array([0]), m, m, m, 2, LucirParams(margin=0.5, top_k=2))
    assert lb.margin == pytest.approx((0.4 + 0.3) / 2)


def test_lucir_margin_rejects_new_class_anchor():
    cos = np.zeros((1, 4))
    f = np.ones((1, 2))
    m = np.ones(1, bool)
    with pytest.raises(ConfigurationError, match="old-class"):
        lucir_loss(f, f, cos, 10.0, np.array([3]), m, m, m, 2, LucirParams())
