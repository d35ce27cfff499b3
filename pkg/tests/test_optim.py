import numpy as np
import pytest

from cheblap.optim import LR_CEILING, LR_FLOOR, AdamState, adam_step, lr_update
from cheblap.utils.errors import NonFinite, ShapeMismatch


def test_zero_gradient_leaves_parameters():
    params = {"w": np.array([[1.0, -2.0]])}
    state = adam_step(params, {"w": np.zeros((1, 2))}, AdamState(), lr=0.1)
    np.testing.assert_array_equal(params["w"], [[1.0, -2.0]])
    assert state.step == 1


@pytest.mark.parametrize("g", [0.5, -3.0, 1e-3])
def test_first_step_moves_by_learning_rate(g):
    params = {"x": np.array([0.0])}
    adam_step(params, {"x": np.array([g])}, AdamState(), lr=0.01)
    assert params["x"][0] == pytest.approx(-0.01 * np.sign(g), rel=1e-4)


def test_identical_runs_are_identical():
    def run():
        rng = np.random.default_rng(0)
        params = {"a": rng.normal(size=(3, 3)), "b": rng.normal(size=(1, 3))}
        state = AdamState()
        for _ in range(10):
            grads = {name: rng.normal(size=p.shape) for name, p in params.items()}
            adam_step(params, grads, state, lr=1e-2)
        return params

    first, second = run(), run()
    for name in first:
        np.testing.assert_array_equal(first[name], second[name])


def test_non_finite_gradient_aborts():
    params = {"w": np.zeros(2)}
    with pytest.raises(NonFinite, match="w"):
        adam_step(params, {"w": np.array([0.0, np.nan])}, AdamState(), lr=0.1)
    np.testing.assert_array_equal(params["w"], np.zeros(2))


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState(), lr=0.1)


def test_learning_rate_shrinks_when_loss_speeds_up():
    assert lr_update(1e-2, 0.5, 0.1) == pytest.approx(1e-2 * 0.99)


def test_learning_rate_grows_when_loss_slows_down():
    assert lr_update(1e-2, 0.1, 0.5) == pytest.approx(1e-2 / 0.99)


def test_equal_speed_shrinks():
    assert lr_update(1e-2, 0.2, 0.2) == pytest.approx(1e-2 * 0.99)


def test_learning_rate_is_clamped():
    assert lr_update(LR_CEILING, 0.0, 1.0) == LR_CEILING
    assert lr_update(LR_FLOOR, 1.0, 0.0) == LR_FLOOR
