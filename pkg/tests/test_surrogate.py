import json

import numpy as np
import pytest

from bosefunc import surrogate as sg
from bosefunc.functional import dimer_exact, full_subspace, minimize_functional, FunctionalConfig
from bosefunc.rdm import UniformFamily, build_uniform_gamma

DIMER = UniformFamily(2, 1.0)


def small_model(seed=3):
    return sg.SurrogateModel.create(2, 2, config=sg.NetworkConfig(hidden=(6, 5), lr=1e-3, epochs=200, seed=seed))


@pytest.fixture(scope="module")
def trained():
    return sg.train(small_model(), DIMER, np.linspace(0.05, 0.95, 19))


def test_featurize_dimer_example():
    x = sg.featurize(build_uniform_gamma(2, 1.0, 0.6))
    assert x[:2] == pytest.approx([0.6, 0.36], abs=1e-12)
    # U diag(n) up to the sign convention of the eigenvectors
    ref = np.array([1.1314, 0.2828, 1.1314, -0.2828])
    assert np.abs(x[2:]) == pytest.approx(np.abs(ref), abs=1e-4)
    assert len(sg.featurize(build_uniform_gamma(4, 1.0, 0.3))) == 18


def test_defaults():
    d = sg.NetworkConfig.defaults(2, 2)
    assert d.hidden == (20, 20) and d.lr == 3e-5 and d.epochs == 10000
    assert d.momentum == 0.9 and d.weight_decay == 1e-6 and d.seed == 0
    big = sg.NetworkConfig.defaults(4, 4)
    assert big.hidden == (400, 400) and big.lr == 1e-5 and big.epochs == 20000
    with pytest.raises(ValueError):
        sg.NetworkConfig(lr=-1.0)
    with pytest.raises(ValueError):
        sg.NetworkConfig(hidden=(3,))


def test_shapes():
    m = sg.SurrogateModel.create(2, 2)
    assert m.frame_dim == 2 and m.input_width == 6 and m.output_width == 1
    assert m.params.size == 20 * 6 + 20 + 20 * 20 + 20 + 1 * 20 + 1
    with pytest.raises(ValueError):
        m.skew_output(np.zeros(5))


def test_zero_weights_give_identity_frame():
    m = small_model()
    m.params = np.zeros_like(m.params)
    v = m.forward(sg.featurize(build_uniform_gamma(2, 1.0, 0.4)))
    assert np.array_equal(v, np.eye(2))


def test_initialization_deterministic():
    assert np.array_equal(small_model(7).params, small_model(7).params)
    assert not np.array_equal(small_model(7).params, small_model(8).params)
    m = small_model()
    bounds = [1 / np.sqrt(fan_in) for _, fan_in in m.layer_shapes]
    for (w, b), bound in zip(m.layers(), bounds):
        assert np.abs(w).max() <= bound and np.abs(b).max() <= bound


@pytest.mark.parametrize("seed", range(5))
def test_frames_orthonormal_for_any_params(seed):
    m = small_model()
    m.params = np.random.default_rng(seed).normal(scale=3.0, size=m.params.size)
    for eta in (0.0, 0.5, 1.0):
        v = m.forward(sg.featurize(build_uniform_gamma(2, 1.0, eta)))
        assert np.allclose(v.T @ v, np.eye(2), atol=1e-12)


def test_mott_subspace_model():
    m = sg.SurrogateModel.create(4, 4, "mott", sg.NetworkConfig(hidden=(4, 4)))
    assert m.frame_dim == 4 and m.output_width == 6
    with pytest.raises(ValueError):
        sg.SurrogateModel.create(2, 2, "other").frame_dim


def test_parameter_gradient_matches_finite_differences():
    m = small_model()
    etas = [0.1, 0.45, 0.8]
    loss, grad = sg.loss_and_gradient(m, DIMER, etas)
    rng = np.random.default_rng(0)
    h = 1e-6
    for idx in rng.choice(m.params.size, 10, replace=False):
        p, q = m.params.copy(), m.params.copy()
        p[idx] += h
        q[idx] -= h
        fd = (sg.loss_and_gradient(m, DIMER, etas, p)[0] - sg.loss_and_gradient(m, DIMER, etas, q)[0]) / (2 * h)
        assert abs(fd - grad[idx]) <= 1e-5 * max(1.0, abs(fd))


def test_zero_learning_rate_is_noop():
    m = small_model()
    before = m.params.copy()
    sg.train(m, DIMER, [0.2, 0.7], sg.NetworkConfig(hidden=(6, 5), lr=0.0, epochs=1, weight_decay=0.0))
    assert np.array_equal(m.params, before) and m.epochs_trained == 1 and len(m.history) == 1


def test_training_lowers_loss(trained):
    assert trained.epochs_trained == 200 and len(trained.history) == 200
    assert trained.history[-1] < trained.history[0]


def test_training_deterministic(trained):
    again = sg.train(small_model(), DIMER, np.linspace(0.05, 0.95, 19))
    assert np.array_equal(again.params, trained.params)


def test_training_grid_validation():
    with pytest.raises(ValueError):
        sg.train(small_model(), DIMER, [])
    with pytest.raises(ValueError):
        sg.train(small_model(), DIMER, [0.5, 1.2])


def test_divergence_raises():
    m = small_model()
    m.params[0] = np.inf
    with pytest.raises(sg.TrainingDivergence) as exc:
        sg.train(m, DIMER, [0.3], sg.NetworkConfig(hidden=(6, 5), epochs=3))
    assert exc.value.history == []


def test_model_is_an_upper_bound(trained):
    etas = np.linspace(0.05, 0.95, 10)
    pred = sg.predict(trained, DIMER, etas)
    assert np.all(pred >= np.array([dimer_exact(e) for e in etas]) - 1e-8)
    sub = full_subspace(2, 2)
    cfg = FunctionalConfig(method="lbfgs", restarts=2)
    for e, f in zip(etas[::3], pred[::3]):
        assert f >= minimize_functional(DIMER(e), sub, cfg).value - 1e-8


@pytest.mark.parametrize("eta", [0.1, 0.37, 0.6, 0.9])
def test_derivative_matches_finite_differences(trained, eta):
    h = 1e-5
    fd = (sg.predict(trained, DIMER, [eta + h])[0] - sg.predict(trained, DIMER, [eta - h])[0]) / (2 * h)
    an = sg.derivative(trained, DIMER, eta)
    assert abs(an - fd) <= 1e-6 * max(1.0, abs(fd))


def test_derivative_requires_training():
    with pytest.raises(ValueError):
        sg.derivative(small_model(), DIMER, 0.5)
    m = small_model()
    m.params[:] = np.nan
    with pytest.raises(ArithmeticError):
        sg.derivative(m, DIMER, 0.5, require_trained=False)


def test_checkpoint_round_trip(trained, tmp_path):
    path = tmp_path / "model.json"
    sg.save_checkpoint(trained, path)
    back = sg.load_checkpoint(path)
    assert np.array_equal(back.params, trained.params)
    assert back.config == trained.config and back.epochs_trained == trained.epochs_trained
    etas = [0.2, 0.55]
    assert np.array_equal(sg.predict(back, DIMER, etas), sg.predict(trained, DIMER, etas))

    payload = json.loads(path.read_text())
    payload["version"] = 99
    path.write_text(json.dumps(payload))
    with pytest.raises(ValueError):
        sg.load_checkpoint(path)
    path.write_text(json.dumps({"format": "other"}))
    with pytest.raises(ValueError):
        sg.load_checkpoint(path)
