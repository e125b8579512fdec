"""Tests for the one-cycle schedule and Adam."""

import numpy as np
import pytest

from factorizephys.autodiff import Tensor
from factorizephys.config import TrainConfig
from factorizephys.errors import ConfigError
from factorizephys.model import ModelParams
from factorizephys.optim import Adam, one_cycle_lr


@pytest.fixture
def cfg():
    return TrainConfig(max_lr=1e-3)


def test_schedule_endpoints(cfg):
    """Test the start, peak and end of a 1000-step cycle."""
    assert one_cycle_lr(0, 1000, cfg) == pytest.approx(4e-5)
    assert one_cycle_lr(300, 1000, cfg) == pytest.approx(1e-3)
    assert one_cycle_lr(999, 1000, cfg) <= 1.01e-7
    assert one_cycle_lr(999, 1000, cfg) == pytest.approx(1e-7)


def test_schedule_shape(cfg):
    """Test the rate rises to the peak and then falls monotonically."""
    rates = np.array([one_cycle_lr(s, 200, cfg) for s in range(200)])
    peak = int(np.argmax(rates))
    assert peak == 60
    assert np.all(np.diff(rates[: peak + 1]) > 0)
    assert np.all(np.diff(rates[peak:]) < 0)
    assert rates.max() == pytest.approx(1e-3)


def test_schedule_out_of_range(cfg):
    with pytest.raises(ConfigError):
        one_cycle_lr(-1, 10, cfg)
    with pytest.raises(ConfigError):
        one_cycle_lr(10, 10, cfg)
    with pytest.raises(ConfigError):
        one_cycle_lr(0, 0, cfg)


def test_schedule_short_cycle(cfg):
    """Test a two-step cycle stays finite."""
    rates = [one_cycle_lr(s, 2, cfg) for s in range(2)]
    assert rates[0] == pytest.approx(4e-5)
    assert rates[1] == pytest.approx(1e-7)


def params_with_grad(value, grad):
    w = Tensor(np.array(value), requires_grad=True, dtype=np.float64, name="w")
    w.grad = np.array(grad, dtype=np.float64)
    return ModelParams({"w": w}, seed=0)


def test_adam_first_step_is_sign_times_lr():
    """Test bias correction makes the first step lr * sign(grad)."""
    opt = Adam()
    out = opt.step(params_with_grad([1.0, -2.0, 0.5], [0.3, -4.0, 0.0]), lr=0.1)
    np.testing.assert_allclose(out["w"].data, [0.9, -1.9, 0.5], atol=1e-6)
    assert opt.steps == 1


def test_adam_returns_new_params():
    params = params_with_grad([1.0], [1.0])
    out = Adam().step(params, lr=0.5)
    assert out is not params
    assert params["w"].data[0] == 1.0
    assert out["w"].requires_grad
    assert out["w"].grad is None
    assert out["w"].dtype == np.float64


def test_adam_skips_params_without_grad():
    params = params_with_grad([1.0], [1.0])
    params["w"].grad = None
    out = Adam().step(params, lr=0.5)
    assert out["w"] is params["w"]


def test_adam_minimizes_quadratic():
    """Test repeated steps on f(w) = sum((w - 3)^2) converge to 3."""
    opt = Adam()
    params = params_with_grad([0.0, 10.0], [0.0, 0.0])
    for _ in range(500):
        w = params["w"]
        w.grad = 2.0 * (w.data - 3.0)
        params = opt.step(params, lr=0.1)
    np.testing.assert_allclose(params["w"].data, [3.0, 3.0], atol=5e-2)


def test_adam_weight_decay_shrinks():
    opt = Adam(weight_decay=0.1)
    out = opt.step(params_with_grad([2.0], [0.0]), lr=0.5)
    assert out["w"].data[0] == pytest.approx(2.0 * (1 - 0.05))


def test_adam_validation():
    with pytest.raises(ConfigError):
        Adam(betas=(1.0, 0.999))
    with pytest.raises(ConfigError):
        Adam(eps=-1.0)
    opt = Adam.from_config(TrainConfig(beta1=0.8, weight_decay=0.01))
    assert opt.betas == (0.8, 0.999)
    assert opt.weight_decay == 0.01
