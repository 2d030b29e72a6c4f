import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from paraflame.dataset import desk_plan, generate
from paraflame.estimators import PCNNRegressor, PFNORegressor, PFNOStarRegressor
from paraflame.validation import check_fields, check_gamma, check_positive_int, check_trajectories

SMALL = dict(layers=1, width=4, modes=8, bands=2, ratio_hidden=4, rollout_steps=2, epochs=2,
             batch_size=8)


@pytest.fixture(scope="module")
def data():
    return generate(desk_plan("MS", [0.1, 0.15], 2, 12, n=32), workers=1)


@pytest.fixture(scope="module")
def fitted(data):
    return PFNORegressor(**SMALL).fit(data)


# -- validation helpers ------------------------------------------------------------------

def test_check_gamma():
    np.testing.assert_array_equal(check_gamma(2.0, 3), [2.0, 2.0, 2.0])
    np.testing.assert_array_equal(check_gamma([1, 2], 2), [1.0, 2.0])
    for bad in (None, [1.0], [1.0, -1.0], [np.nan, 1.0]):
        with pytest.raises(ValueError):
            check_gamma(bad, 2)


def test_check_trajectories(data):
    assert check_trajectories(data) is data
    with pytest.raises(ValueError, match="gamma is taken"):
        check_trajectories(data, gamma=1.0)
    arr = np.zeros((3, 5, 16))
    ts = check_trajectories(arr, [1.0, 2.0, 3.0], equation="MS")
    assert len(ts) == 3 and ts.n == 16 and ts.frame_count == 15
    np.testing.assert_array_equal(ts.gammas, [1.0, 2.0, 3.0])
    assert len(check_trajectories(arr[0], 1.0)) == 1
    with pytest.raises(ValueError, match="n_frames >= 2"):
        check_trajectories(np.zeros((2, 1, 16)), 1.0)
    with pytest.raises(ValueError):
        check_trajectories(np.full((1, 3, 4), np.inf), 1.0)


def test_check_fields():
    x = np.arange(8.0).reshape(2, 4)
    f, g = check_fields(x, 1.5, 4)
    assert f.shape == (2, 4) and list(g) == [1.5, 1.5]
    f, g = check_fields(x, None, 3)
    np.testing.assert_array_equal(g, [3.0, 7.0])
    assert f.shape == (2, 3)
    with pytest.raises(ValueError, match="gamma column"):
        check_fields(x, None, 4)
    with pytest.raises(ValueError, match="grid points"):
        check_fields(x, 1.0, 5)


@pytest.mark.parametrize("value", [0, -1, 1.5, True, "3"])
def test_check_positive_int_rejects(value):
    with pytest.raises(ValueError):
        check_positive_int(value, "k")


# -- estimators ----------------------------------------------------------------------------

@pytest.mark.parametrize("cls", [PFNORegressor, PFNOStarRegressor, PCNNRegressor])
def test_params_and_clone(cls):
    est = cls(epochs=7, random_state=3)
    params = est.get_params()
    assert params["epochs"] == 7 and params["random_state"] == 3
    other = clone(est).set_params(epochs=9)
    assert other.epochs == 9 and est.epochs == 7
    with pytest.raises(NotFittedError):
        est.predict(np.zeros((1, 8)), 1.0)


def test_fit_attributes_and_predict(fitted, data):
    assert fitted.n_features_in_ == 32
    assert [r["epoch"] for r in fitted.history_] == [0, 1]
    frames = data.records[0].frames[:3]
    by_arg = fitted.predict(frames, 0.1)
    by_column = fitted.predict(np.column_stack([frames, np.full(3, 0.1)]))
    np.testing.assert_array_equal(by_arg, by_column)
    np.testing.assert_array_equal(by_arg, fitted.model_.predict(frames, 0.1))
    assert fitted.rollout(frames[0], 0.1, 4).shape == (4, 32)


def test_fit_is_deterministic(fitted, data):
    again = PFNORegressor(**SMALL).fit(data)
    assert again.history_ == fitted.history_
    for k, v in fitted.model_.state_dict().items():
        np.testing.assert_array_equal(again.model_.state_dict()[k], v)


def test_array_input_matches_trajectory_set(fitted, data):
    arr = np.stack([r.frames for r in data.records])
    est = PFNORegressor(**SMALL, equation="MS").fit(arr, gamma=data.gammas)
    assert est.history_ == fitted.history_


def test_warm_start_continues_numbering(data):
    est = PFNORegressor(**SMALL).fit(data)
    est.set_params(warm_start=True).fit(data)
    assert [r["epoch"] for r in est.history_] == [0, 1, 2, 3]
    assert est.epochs_done_ == 4


def test_eval_set_and_scores(data):
    arr = np.stack([r.frames for r in data.records])
    est = PCNNRegressor(levels=2, channels=(2, 3), param_levels=2, ratio_hidden=3, rollout_steps=2,
                        epochs=2, batch_size=8, equation="MS")
    est.fit(arr, gamma=data.gammas, eval_set=(arr[:1], [0.1]))
    assert all(np.isfinite(r["valid_loss"]) for r in est.history_)
    assert est.score(data) < 0
    r2 = est.score(arr[0, :-1], arr[0, 1:], gamma=0.1)
    assert np.isfinite(r2)
    with pytest.raises(ValueError, match="grid points"):
        est.predict(np.zeros((1, 16)), 0.1)
