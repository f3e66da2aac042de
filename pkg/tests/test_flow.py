"""Invertible transform stack: correctness suite, training behavior, serialization."""

import numpy as np
import pytest

from flowplan.flow import (
    Coupling,
    FlowError,
    FlowFormatError,
    FlowModel,
    LossCurve,
    Normalization,
    TrainConfig,
    load,
    save,
    train,
)

LOG_2PI = np.log(2.0 * np.pi)


def random_model(dim=4, n_layers=2, hidden=16, seed=0, last_layer_scale=0.5):
    rng = np.random.default_rng(seed)
    model = FlowModel.create(
        dim, n_layers=n_layers, hidden=hidden, rng=rng, last_layer_scale=last_layer_scale
    )
    # Give the normalization layer non-trivial parameters too.
    model.layers[0].log_scale = rng.normal(scale=0.3, size=dim)
    model.layers[0].shift = rng.normal(size=dim)
    return model


# -- identity behavior ----------------------------------------------------


def test_identity_model_is_identity():
    model = FlowModel.create(6, n_layers=4, hidden=8)
    z = np.random.default_rng(0).normal(size=(10, 6))
    x, logdet = model.forward(z)
    np.testing.assert_allclose(x, z)
    np.testing.assert_allclose(logdet, 0.0)


def test_identity_log_prob_matches_standard_normal():
    model = FlowModel.create(2, n_layers=2, hidden=8)
    assert model.log_prob(np.zeros(2)) == pytest.approx(-LOG_2PI)


def test_single_coupling_constant_scale_logdet():
    dim = 6
    model = FlowModel.create(dim, n_layers=1, hidden=8, with_normalization=False)
    layer = model.layers[0]
    s_const = 0.7
    # Force the conditioner output: zero weights, bias = atanh-scaled constant.
    layer.W3[...] = 0.0
    layer.b3[: layer.d_a] = layer.s_max * np.arctanh(s_const / layer.s_max)
    layer.b3[layer.d_a :] = 0.0
    z = np.random.default_rng(1).normal(size=(5, dim))
    _, logdet = model.forward(z)
    np.testing.assert_allclose(logdet, layer.d_a * s_const, rtol=1e-12)


# -- correctness suite ----------------------------------------------------


def test_inverse_of_forward_is_identity():
    model = random_model(dim=8, n_layers=4)
    z = np.random.default_rng(2).normal(size=(1000, 8))
    x, _ = model.forward(z)
    z_back, _ = model.inverse(x)
    assert np.max(np.abs(z_back - z)) < 1e-6


def test_forward_inverse_logdets_cancel():
    model = random_model()
    z = np.random.default_rng(3).normal(size=(20, 4))
    x, ld_f = model.forward(z)
    _, ld_i = model.inverse(x)
    np.testing.assert_allclose(ld_f + ld_i, 0.0, atol=1e-8)


def test_logdet_matches_finite_difference_jacobian():
    model = random_model(dim=4, n_layers=3, seed=5)
    rng = np.random.default_rng(6)
    eps = 1e-6
    for _ in range(5):
        z0 = rng.normal(size=4)
        _, logdet = model.forward(z0)
        J = np.empty((4, 4))
        for j in range(4):
            zp = z0.copy()
            zm = z0.copy()
            zp[j] += eps
            zm[j] -= eps
            xp, _ = model.forward(zp)
            xm, _ = model.forward(zm)
            J[:, j] = (xp - xm) / (2 * eps)
        fd = np.log(abs(np.linalg.det(J)))
        assert logdet == pytest.approx(fd, rel=1e-4, abs=1e-6)


def test_nll_gradients_match_central_differences():
    model = random_model(dim=4, n_layers=2, hidden=8, seed=7)
    X = np.random.default_rng(8).normal(size=(16, 4))
    nll0, grads = model.nll_and_grads(X)
    assert nll0 == pytest.approx(model.nll(X), rel=1e-10)
    eps = 1e-6
    rng = np.random.default_rng(9)
    for layer, lg in zip(model.layers, grads):
        for p, g in zip(layer.parameters(), lg):
            flat = p.reshape(-1)
            gflat = g.reshape(-1)
            # Spot-check a handful of coordinates per parameter array.
            idx = rng.choice(flat.size, size=min(5, flat.size), replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                up = model.nll(X)
                flat[i] = orig - eps
                dn = model.nll(X)
                flat[i] = orig
                fd = (up - dn) / (2 * eps)
                assert gflat[i] == pytest.approx(fd, rel=1e-4, abs=1e-7)


def test_log_prob_normalization_by_quadrature():
    model = random_model(dim=2, n_layers=2, hidden=8, seed=10)
    grid = np.linspace(-30.0, 30.0, 601)
    h = grid[1] - grid[0]
    xx, yy = np.meshgrid(grid, grid)
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    dens = np.exp(model.log_prob(pts))
    integral = dens.sum() * h * h
    assert integral == pytest.approx(1.0, rel=0.01)


def test_sample_reproducible_and_consistent_with_forward():
    model = random_model(dim=6, n_layers=2, seed=11)
    a = model.sample(50, np.random.default_rng(12))
    b = model.sample(50, np.random.default_rng(12))
    np.testing.assert_array_equal(a, b)
    # Samples are the forward image of the base draws the rng would produce.
    z = np.random.default_rng(12).standard_normal((50, 6))
    x, _ = model.forward(z)
    np.testing.assert_array_equal(a, x)


def test_dimension_validation():
    model = random_model(dim=4)
    with pytest.raises(FlowError):
        model.forward(np.zeros(5))
    with pytest.raises(FlowError):
        model.log_prob(np.zeros((3, 5)))


def test_coupling_needs_two_dims():
    with pytest.raises(FlowError):
        Coupling(1, 0)


# -- normalization layer --------------------------------------------------


def test_normalization_data_init_whitens():
    rng = np.random.default_rng(14)
    data = rng.normal(loc=3.0, scale=2.0, size=(500, 4))
    layer = Normalization(4)
    layer.init_from_data(data)
    z, _ = layer.inverse(data)
    assert np.abs(z.mean(axis=0)).max() < 1e-9
    np.testing.assert_allclose(z.std(axis=0), 1.0, rtol=1e-9)


# -- training -------------------------------------------------------------


def test_train_on_base_data_keeps_entropy():
    rng = np.random.default_rng(15)
    data = rng.normal(size=(300, 4))
    cfg = TrainConfig(steps=60, patience=60, jitter=0.0, seed=0)
    model, curve = train(data, cfg, n_layers=2, hidden=8)
    # Standard-normal entropy per 4 dims: 0.5*d*(1+log 2pi) ~ 5.68 nats.
    entropy = 0.5 * 4 * (1.0 + LOG_2PI)
    assert curve.test_nll[-1] == pytest.approx(entropy, rel=0.1)


def test_train_learns_shifted_base():
    rng = np.random.default_rng(16)
    data = rng.normal(size=(400, 4)) + 3.0
    cfg = TrainConfig(steps=80, patience=80, jitter=0.0, seed=0)
    model, _ = train(data, cfg, n_layers=2, hidden=8)
    held = np.random.default_rng(17).normal(size=(200, 4)) + 3.0
    identity = FlowModel.create(4, n_layers=2, hidden=8)
    gain = model.log_prob(held).mean() - identity.log_prob(held).mean()
    # Shifted-Gaussian KL bound: N * 9/2 nats available; require a large share.
    assert gain > 4.0


def test_train_curve_best_is_monotone():
    rng = np.random.default_rng(18)
    data = rng.normal(size=(100, 4))
    cfg = TrainConfig(steps=40, patience=40, seed=1)
    _, curve = train(data, cfg, n_layers=2, hidden=8)
    best = np.minimum.accumulate(curve.test_nll)
    assert np.all(np.diff(best) <= 0.0)
    assert curve.steps[0] == 0  # pre-update state recorded


def test_train_validation():
    with pytest.raises(ValueError):
        train(np.zeros((1, 4)), TrainConfig())
    with pytest.raises(ValueError):
        train(np.full((10, 4), np.nan), TrainConfig())
    with pytest.raises(ValueError):
        TrainConfig(split=1.0)


def test_loss_curve_csv(tmp_path):
    curve = LossCurve(np.array([0, 1]), np.array([1.5, 1.25]), np.array([1.75, 1.5]))
    path = tmp_path / "loss.csv"
    curve.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "step,train_nll,test_nll"
    assert lines[1] == "0,1.5,1.75"


# -- serialization --------------------------------------------------------


def test_save_load_round_trip_bit_exact(tmp_path):
    model = random_model(dim=6, n_layers=3, seed=19)
    model.metadata["channel"] = 1
    path = tmp_path / "model.nfm"
    save(model, path)
    loaded = load(path)
    assert loaded.dim == 6
    assert loaded.metadata["channel"] == 1
    for p, q in zip(model.parameters(), loaded.parameters()):
        np.testing.assert_array_equal(p, q)
    x = np.random.default_rng(20).normal(size=(5, 6))
    np.testing.assert_array_equal(model.log_prob(x), loaded.log_prob(x))


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.nfm"
    path.write_bytes(b"NOTAMODL" + b"\x00" * 32)
    with pytest.raises(FlowFormatError):
        load(path)


def test_load_rejects_bad_version(tmp_path):
    model = random_model(dim=4, n_layers=1)
    path = tmp_path / "model.nfm"
    save(model, path)
    raw = bytearray(path.read_bytes())
    raw[8] = 99  # version field
    path.write_bytes(bytes(raw))
    with pytest.raises(FlowFormatError):
        load(path)
