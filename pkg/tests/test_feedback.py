import pytest
import torch
import torch.nn as nn
from hypothesis import given, settings
from hypothesis import strategies as st

from rlnet.blocks import BlockConfig
from rlnet.errors import ConfigError, ContractError
from rlnet.feedback import (ErrorDetector, FeatureCompensator, compensator_target, detector_target,
                            error_from_detector, rectify)

CFG = BlockConfig(base_channels=8)
unit = st.floats(0.001, 0.999, allow_nan=False)


def t(v):
    return torch.tensor(v, dtype=torch.float64)


def test_error_from_detector_examples():
    assert error_from_detector(t([1.0, 1.0]), 0.05).abs().max() == 0
    assert error_from_detector(t(0.5), 0.05).item() == pytest.approx(0.05, abs=1e-12)
    assert error_from_detector(t(0.25), 0.15).item() == pytest.approx(0.45, abs=1e-12)


@pytest.mark.parametrize("theta1", [0.0, -0.1])
def test_error_from_detector_rejects_nonpositive_theta(theta1):
    with pytest.raises(ConfigError):
        error_from_detector(t(0.5), theta1)


@given(unit, unit)
def test_error_is_strictly_decreasing_in_d(a, b):
    if a == b:
        return
    lo, hi = sorted((a, b))
    e = error_from_detector(t([lo, hi]), 0.05)
    assert e[0] > e[1] >= 0


def test_rectify_examples():
    assert rectify(t(0.5), t(0.3)).item() == 0.5
    assert rectify(t(0.2), t(0.1)).item() == pytest.approx(0.14, abs=1e-12)
    assert rectify(t(0.8), t(0.1)).item() == pytest.approx(0.86, abs=1e-12)
    with pytest.raises(ContractError):
        rectify(torch.zeros(2), torch.zeros(3))


@settings(max_examples=200)
@given(unit, st.one_of(st.just(0.0), st.floats(1e-6, 2.0, allow_nan=False)))
def test_rectify_sign_invariant(phi, err):
    out = rectify(t(phi), t(err)).item()
    if err == 0:
        assert out == phi
    elif phi != 0.5:
        delta = out - phi
        assert (delta > 0) == (2 * phi - 1 > 0)


def test_error_inverts_detector_target():
    # a detector hitting its target gives back |R - phi| - theta1 where the target is
    # below 1; in the truncated region the target is exactly 1 and the error vanishes
    theta1 = 0.05
    phi = t([[0.1, 0.5], [0.9, 0.3]])
    r = t([[0.4, 0.45], [0.2, 0.31]])
    d = detector_target(phi, r, theta1)
    err = error_from_detector(d, theta1)
    abs_err = (r - phi).abs()
    inside = abs_err >= theta1
    torch.testing.assert_close(err[inside], abs_err[inside] - theta1, rtol=0, atol=1e-12)
    assert torch.equal(d[~inside], torch.ones_like(d[~inside]))
    assert torch.equal(err[~inside], torch.zeros_like(err[~inside]))


def test_rectify_after_error_matches_scalar_oracle():
    theta1 = 0.15
    d = [[0.3, 0.9], [0.55, 0.2]]
    phi = [[0.1, 0.7], [0.5, 0.45]]
    out = rectify(t(phi), error_from_detector(t(d), theta1))
    for i in range(2):
        for j in range(2):
            err = theta1 / d[i][j] - theta1
            want = phi[i][j] - err * (1 - 2 * phi[i][j])
            assert abs(out[i, j].item() - want) <= 1e-6


def test_detector_target_contract():
    phi = torch.rand(1, 3, 4, 4)
    r = torch.rand(1, 3, 4, 4)
    assert torch.equal(detector_target(phi, r, 0.0), torch.zeros_like(phi))
    tgt = detector_target(phi, r, 0.1)
    assert ((tgt > 0) & (tgt <= 1)).all()
    with pytest.raises(ConfigError):
        detector_target(phi, r, -0.1)


def test_detector_zero_weights_gives_half():
    det = ErrorDetector(8, CFG)
    for p in det.parameters():
        nn.init.zeros_(p)
    out = det(torch.rand(1, 3, 16, 16), torch.rand(1, 3, 16, 16))
    assert torch.equal(out, torch.full_like(out, 0.5))


def test_detector_output_in_open_unit_interval():
    for i in range(100):
        torch.manual_seed(i)
        det = ErrorDetector(4, BlockConfig(base_channels=4, gn_groups=2, se_reduction=2))
        out = det(torch.rand(1, 3, 8, 8), torch.rand(1, 3, 8, 8))
        assert out.shape == (1, 3, 8, 8)
        assert (out > 0).all() and (out < 1).all()


def test_detector_rejects_scale_mismatch():
    det = ErrorDetector(8, CFG)
    with pytest.raises(ContractError):
        det(torch.rand(1, 3, 16, 16), torch.rand(1, 3, 32, 32))


def test_compensator_modes_and_scales():
    comp = FeatureCompensator(8, CFG)
    x = torch.rand(1, 3, 64, 64)
    inf = comp(x)
    assert not inf.training_mode
    assert inf.omega_half is None and inf.omega_quarter is None
    assert inf.embedding_half.shape == (1, 3, 32, 32)
    assert inf.embedding_quarter.shape == (1, 3, 16, 16)
    tr = comp(x, torch.rand(1, 3, 32, 32), torch.rand(1, 3, 16, 16))
    assert tr.training_mode
    assert tr.omega_half.shape == (1, 3, 32, 32) and tr.omega_quarter.shape == (1, 3, 16, 16)
    with pytest.raises(ContractError):
        comp(x, torch.rand(1, 3, 32, 32), None)
    with pytest.raises(ContractError):
        comp(x, torch.rand(1, 3, 16, 16), torch.rand(1, 3, 16, 16))


def test_compensator_target_reduces_to_truth_at_zero_theta():
    r = torch.rand(1, 3, 8, 8)
    omega = torch.randn(1, 3, 8, 8)
    assert torch.equal(compensator_target(r, omega, 0.0), r)
    torch.testing.assert_close(compensator_target(r, omega, 0.15), r * (1 + 0.15 * omega))
