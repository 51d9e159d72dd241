"""Network contracts: shapes, zero-init, tape gradients, trained behavior."""

import numpy as np
import pytest

from synth import identity_stats, train_on_windows

from macdmp import tensor as T
from macdmp.diffusion import forward_noise
from macdmp.models import (ClassifierNet, DenoiserNet, InverseDynamicsNet,
                           classifier_forward, classifier_grad, denoiser_forward,
                           inv_dyn_forward, make_bundle, pack_pair,
                           timestep_embedding, unpack_pair)
from macdmp.netsim import DomainError

H, K = 8, 20


def rand_pair(rng, batch=None):
    shape = (H, 4) if batch is None else (batch, H, 4)
    return rng.standard_normal(shape), rng.standard_normal(shape)


def test_embedding_shape_and_range():
    emb = timestep_embedding([1, K], K)
    assert emb.shape == (2, 32)
    with pytest.raises(DomainError):
        timestep_embedding(0, K)
    with pytest.raises(DomainError):
        timestep_embedding(K + 1, K)


def test_pack_unpack_round_trip():
    rng = np.random.default_rng(0)
    x, xbar = rand_pair(rng, batch=3)
    x2, xbar2 = unpack_pair(pack_pair(x, xbar), H)
    np.testing.assert_array_equal(x, x2)
    np.testing.assert_array_equal(xbar, xbar2)


def test_denoiser_zero_init_outputs_zero():
    net = DenoiserNet(H, K, hidden=32, blocks=2, seed=0)
    rng = np.random.default_rng(1)
    x, xbar = rand_pair(rng)
    out = denoiser_forward(net, x, xbar, 5)
    assert out.shape == (2 * H * 4,)
    np.testing.assert_array_equal(out, np.zeros(2 * H * 4))


def test_denoiser_output_shape_all_k():
    net = DenoiserNet(H, K, hidden=32, blocks=1, seed=0)
    rng = np.random.default_rng(2)
    x, xbar = rand_pair(rng, batch=4)
    for k in (1, K // 2, K):
        out = denoiser_forward(net, x, xbar, np.full(4, k))
        assert out.shape == (4, 2 * H * 4)
        assert np.all(np.isfinite(out))


def test_classifier_grad_matches_finite_differences():
    net = ClassifierNet(H, K, hidden=24, blocks=2, seed=3)
    # give the zero-initialized head real weights so the gradient is nontrivial
    rng = np.random.default_rng(4)
    net.net.p["out.w"].data = rng.standard_normal(net.net.p["out.w"].data.shape) * 0.1
    x, xbar = rand_pair(rng)
    gx, gxbar = classifier_grad(net, x, xbar, 7)

    h = 1e-5
    for arr, got, which in ((x, gx, "x"), (xbar, gxbar, "xbar")):
        fd = np.zeros_like(arr)
        for i in range(H):
            for j in range(4):
                p, m = arr.copy(), arr.copy()
                p[i, j] += h
                m[i, j] -= h
                if which == "x":
                    fd[i, j] = (classifier_forward(net, p, xbar, 7)
                                - classifier_forward(net, m, xbar, 7)) / (2 * h)
                else:
                    fd[i, j] = (classifier_forward(net, x, p, 7)
                                - classifier_forward(net, x, m, 7)) / (2 * h)
        np.testing.assert_allclose(got, fd, rtol=1e-5, atol=1e-8)


def test_constant_classifier_zero_gradient():
    net = ClassifierNet(H, K, hidden=16, blocks=1, seed=5)  # zero head = constant
    rng = np.random.default_rng(6)
    x, xbar = rand_pair(rng)
    gx, gxbar = classifier_grad(net, x, xbar, 3)
    np.testing.assert_array_equal(gx, 0)
    np.testing.assert_array_equal(gxbar, 0)


def test_parameter_sharing_across_agents():
    # same bundle, different inputs: outputs differ only through inputs
    net = ClassifierNet(H, K, hidden=16, blocks=1, seed=7)
    rng = np.random.default_rng(8)
    x1, xb1 = rand_pair(rng)
    out_a = classifier_forward(net, x1, xb1, 2)
    out_b = classifier_forward(net, x1, xb1, 2)
    assert out_a == out_b


def test_inv_dyn_batch_order_invariance():
    net = InverseDynamicsNet(hidden=16, blocks=1, seed=9)
    rng = np.random.default_rng(10)
    net.net.p["out.w"].data = rng.standard_normal(net.net.p["out.w"].data.shape)
    o = rng.standard_normal((6, 4))
    o2 = rng.standard_normal((6, 4))
    out = inv_dyn_forward(net, o, o2)
    perm = rng.permutation(6)
    out_p = inv_dyn_forward(net, o[perm], o2[perm])
    np.testing.assert_allclose(out[perm], out_p, rtol=1e-12)


@pytest.mark.slow
def test_inv_dyn_learns_linear_env():
    # deterministic synthetic env: a_t = o_{t+1}[0] - o_t[0]
    rng = np.random.default_rng(11)
    o = rng.standard_normal((4000, 4))
    o_next = rng.standard_normal((4000, 4))
    a = o_next[:, 0] - o[:, 0]
    net = InverseDynamicsNet(hidden=48, blocks=1, seed=12)
    params = net.params()
    opt = T.adam_init(params, lr=3e-3)
    names = list(params)
    for step in range(600):
        idx = rng.integers(3000, size=64)
        pred = net.apply(o[idx], o_next[idx])
        loss = T.mse(pred, T.Tensor(a[idx].reshape(-1, 1)))
        grads = T.backward(loss, [params[n] for n in names])
        T.adam_step(opt, params, dict(zip(names, grads)))
    # held-out R^2
    hold = slice(3000, 4000)
    pred = net.apply(o[hold], o_next[hold]).data[:, 0]
    resid = np.sum((pred - a[hold]) ** 2)
    total = np.sum((a[hold] - a[hold].mean()) ** 2)
    r2 = 1.0 - resid / total
    assert r2 >= 0.99
    # identical inputs predict (near) zero action
    same = rng.standard_normal((50, 4))
    zero_pred = net.apply(same, same).data[:, 0]
    assert np.max(np.abs(zero_pred)) <= 0.05


@pytest.mark.slow
def test_denoiser_point_mass_inverts_forward_noising(point_mass_model):
    result, windows = point_mass_model
    schedule = result.schedule
    x0, xbar0 = windows[0].x0, windows[0].xbar0
    rng = np.random.default_rng(14)
    errs, mags = [], []
    for _ in range(30):
        k = int(rng.integers(1, K + 1))
        eps = rng.standard_normal(2 * H * 4)
        xk, xbark = forward_noise(schedule, x0, xbar0, k, eps)
        eps_hat = denoiser_forward(result.models.denoiser, xk, xbark, k)
        abar = schedule.alpha_bar(k)
        z0 = pack_pair(x0, xbar0)
        zk = pack_pair(xk, xbark)
        oracle = (zk - np.sqrt(abar) * z0) / np.sqrt(1 - abar)
        errs.append(np.mean((eps_hat - oracle) ** 2))
        mags.append(np.mean(oracle ** 2))
    rel_rms = np.sqrt(np.mean(errs) / np.mean(mags))
    assert rel_rms <= 0.10


@pytest.mark.slow
def test_classifier_gradient_concentrates_on_label_component():
    # windows labeled by the mean of the first observation component
    rng = np.random.default_rng(15)
    from macdmp.dataset import TrajectoryWindow
    windows = []
    for i in range(400):
        x0 = rng.standard_normal((H, 4))
        windows.append(TrajectoryWindow(
            x0=x0, xbar0=np.zeros((H, 4)), actions=np.zeros(H),
            rewards=np.zeros(H), y=float(x0[:, 0].mean()), start=0, node=0))
    stats = identity_stats()
    result, _ = train_on_windows(windows, stats, H=H, K=K, steps=900, lr=2e-3, seed=16)
    x, xbar = rand_pair(np.random.default_rng(17))
    gx, gxbar = classifier_grad(result.models.classifier, x, xbar, 1)
    per_component = np.abs(gx).mean(axis=0)
    assert per_component[0] > per_component[1:].max()
    assert per_component[0] > np.abs(gxbar).mean(axis=0).max()


def test_bundle_params_namespaced():
    bundle = make_bundle(H, K, hidden=16, blocks=1, inv_hidden=8, inv_blocks=1)
    names = list(bundle.params())
    assert any(n.startswith("denoiser/") for n in names)
    assert any(n.startswith("classifier/") for n in names)
    assert any(n.startswith("inv_dyn/") for n in names)
    assert len(names) == len(set(names))
