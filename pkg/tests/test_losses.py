import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import max_rel_error, numeric_grad
from hdsr.losses import (
    BinarySample,
    FocalParams,
    InfeasibleTargetError,
    binary_objectness_loss,
    cross_entropy,
    detection_alpha,
    focal_grad,
    focal_loss,
    multiclass_ce,
    sequence_loss,
    sequence_loss_logits,
    softmax_cross_entropy,
)


def test_focal_reduces_to_cross_entropy():
    p = np.linspace(1e-6, 1 - 1e-6, 1000)
    for y in (1, -1):
        assert np.max(np.abs(focal_loss(p, y, 1.0, 0.0) - cross_entropy(p, y))) <= 1e-12


def test_focal_matches_formula():
    for p, y in [(0.9, 1), (0.9, -1), (0.3, 1)]:
        pt = p if y == 1 else 1 - p
        assert focal_loss(p, y, 0.25, 2.0) == pytest.approx(-0.25 * (1 - pt) ** 2 * math.log(pt), rel=1e-14)


def test_focal_downweights_easy_examples():
    easy = focal_loss(0.95, 1) / cross_entropy(0.95, 1)
    hard = focal_loss(0.2, 1) / cross_entropy(0.2, 1)
    assert easy < hard


@given(st.floats(1e-4, 1 - 1e-4), st.sampled_from([1, -1]), st.floats(0.0, 1.0), st.sampled_from([0.0, 0.5, 1.0, 2.0, 5.0]))
def test_focal_grad_matches_finite_difference(p, y, alpha, gamma):
    h = 1e-7 * min(p, 1 - p)
    num = (focal_loss(p + h, y, alpha, gamma) - focal_loss(p - h, y, alpha, gamma)) / (2 * h)
    ana = focal_grad(p, y, alpha, gamma)
    assert abs(num - ana) <= 1e-4 * max(abs(num), abs(ana), 1e-8)


def test_strict_probabilities_raise():
    with pytest.raises(ValueError):
        cross_entropy(0.0, 1)
    with pytest.raises(ValueError):
        focal_loss(1.0, -1)
    assert np.isfinite(focal_loss(0.0, 1, strict=False))


def test_value_objects_validate():
    with pytest.raises(ValueError):
        BinarySample(0, 0.5)
    with pytest.raises(ValueError):
        FocalParams(alpha_t=1.5)
    with pytest.raises(ValueError):
        FocalParams(gamma=-1)


def test_detection_alpha():
    assert detection_alpha(np.array([1, -1])).tolist() == [0.25, 0.75]


def test_multiclass_ce():
    assert multiclass_ce([0.2, 0.8], 1) == pytest.approx(-math.log(0.8))
    with pytest.raises(IndexError):
        multiclass_ce([0.2, 0.8], 2)
    with pytest.raises(ValueError):
        multiclass_ce([0.2, 0.7], 0)


def test_softmax_cross_entropy_gradient(rng):
    z = rng.normal(size=(4, 6))
    t = rng.integers(0, 6, size=4)
    loss, g = softmax_cross_entropy(z, t)
    ref = np.mean([-(z[i, t[i]] - np.log(np.exp(z[i]).sum())) for i in range(4)])
    assert loss == pytest.approx(ref, rel=1e-12)
    num = numeric_grad(lambda: softmax_cross_entropy(z, t)[0], z)
    assert max_rel_error(num, g) <= 1e-4


@pytest.mark.parametrize("kind", ["focal", "ce"])
def test_objectness_loss_gradient(rng, kind):
    z = rng.normal(scale=3, size=20)
    y = np.where(rng.random(20) < 0.3, 1, -1)
    _, g = binary_objectness_loss(z, y, kind)
    # elementwise loss: differentiate each entry on its own to avoid cancellation
    for i in range(len(z)):
        num = numeric_grad(lambda: float(binary_objectness_loss(z, y, kind)[0][i]), z[i:i + 1])
        assert max_rel_error(num, g[i:i + 1]) <= 1e-4


def test_objectness_loss_unknown_kind():
    with pytest.raises(ValueError):
        binary_objectness_loss(np.zeros(2), np.ones(2), "hinge")


def _collapse(path):
    out, prev = [], None
    for s in path:
        if s != prev and s != 10:
            out.append(s)
        prev = s
    return "".join(map(str, out))


def _brute_force(frames, target):
    t = len(frames)
    total = 0.0
    for path in itertools.product(range(11), repeat=t):
        if _collapse(path) == target:
            total += float(np.prod(frames[np.arange(t), path]))
    return total


@pytest.mark.parametrize("seed", range(6))
def test_sequence_loss_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    t = int(rng.integers(1, 5))
    frames = rng.dirichlet(np.ones(11), size=t)
    n = int(rng.integers(1, t + 1))
    target = "".join(str(d) for d in rng.integers(0, 3, size=n))  # small alphabet -> repeats
    total = _brute_force(frames, target)
    if total == 0.0:
        with pytest.raises(InfeasibleTargetError):
            sequence_loss(frames, target)
        return
    loss, _ = sequence_loss(frames, target)
    assert math.exp(-loss) == pytest.approx(total, rel=1e-9)


def test_sequence_loss_repeated_digits_need_a_blank():
    frames = np.full((2, 11), 1 / 11)
    with pytest.raises(InfeasibleTargetError):
        sequence_loss(frames, "11")
    loss, _ = sequence_loss(np.full((3, 11), 1 / 11), "11")
    assert math.exp(-loss) == pytest.approx(1 / 11 ** 3)


def test_sequence_loss_gradients(rng):
    logits = rng.normal(size=(6, 11))
    _, g = sequence_loss_logits(logits, "3153")
    num = numeric_grad(lambda: sequence_loss_logits(logits, "3153")[0], logits)
    assert max_rel_error(num, g) <= 1e-4

    frames = rng.dirichlet(np.ones(11), size=5)
    logp = np.log(frames)
    _, g = sequence_loss(frames, "70")
    num = numeric_grad(lambda: sequence_loss(np.exp(logp), "70")[0], logp)
    assert max_rel_error(num, g) <= 1e-4
