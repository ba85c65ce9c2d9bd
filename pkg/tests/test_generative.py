import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from siforecast.exceptions import ContractError, SolverDivergenceError
from siforecast.generative import (
    METHODS,
    GenerativeModel,
    PathNoise,
    SolverConfig,
    ddpm_loss,
    ddpm_sample,
    euler_maruyama,
    fm_loss,
    importance_times,
    make_head,
    sgm_loss,
    sgm_sample,
    si_loss,
    si_sample_backward,
    si_sample_forward,
)
from siforecast.generative.heads import vp_mean_coeff
from siforecast.metrics import wasserstein_1d
from siforecast.numerics import Tensor
from siforecast.schedules import InterpolantSchedule

SMALL = dict(hidden_dim=8, n_blocks=1, time_dim=4)


def _const_net(value):
    return lambda x, s, cond: Tensor(np.asarray(value, dtype=np.float64))


def _zero_net(x, s, cond):
    return Tensor(np.zeros(np.shape(x)))


# -- head structure ----------------------------------------------------------------


@pytest.mark.parametrize("method", METHODS)
def test_net_count_per_head(method):
    head = make_head(method, 2, **SMALL)
    assert len(head.nets) == (2 if method == "si" else 1)
    with pytest.raises(ContractError):
        head.loss(np.zeros((0, 2)))


def test_unknown_method():
    with pytest.raises(ContractError):
        make_head("vae", 2)


# -- DDPM ----------------------------------------------------------------------------


def test_ddpm_loss_oracle_and_zero_net():
    head = make_head("ddpm", 3, **SMALL)
    rng = np.random.default_rng(0)
    x1 = rng.standard_normal((10000, 3))
    steps = rng.integers(1, 1001, 10000)
    eps = rng.standard_normal((10000, 3))
    head.nets["eps"] = _const_net(eps)
    assert float(ddpm_loss(head, x1, steps=steps, eps=eps).data) == 0.0
    head.nets["eps"] = _zero_net
    assert float(ddpm_loss(head, x1, steps=steps, eps=eps).data) == pytest.approx(3.0, rel=0.05)


@pytest.mark.parametrize("method", ["ddpm", "sgm", "fm"])
def test_baseline_losses_invariant_to_batch_order(method):
    head = make_head(method, 2, seed=1, **SMALL)
    rng = np.random.default_rng(1)
    x1, eps = rng.standard_normal((2, 64, 2))
    perm = rng.permutation(64)
    if method == "ddpm":
        t = rng.integers(1, 1001, 64)
        fn, key = ddpm_loss, "steps"
    else:
        t = rng.uniform(0.01, 1.0, 64)
        fn, key = (sgm_loss, "s") if method == "sgm" else (fm_loss, "s")
    a = float(fn(head, x1, eps=eps, **{key: t}).data)
    b = float(fn(head, x1[perm], eps=eps[perm], **{key: t[perm]}).data)
    assert a == pytest.approx(b, rel=1e-12)


def test_ddpm_single_step_chain_is_one_denoise():
    head = make_head("ddpm", 2, n_train_steps=1, **SMALL)
    head.nets["eps"] = lambda x, s, c: Tensor(0.5 * x)
    out = ddpm_sample(head, 4, rng=np.random.default_rng(2), solver=SolverConfig(steps=1))
    x = np.random.default_rng(2).standard_normal((4, 2))
    beta = 1e-4
    expected = (x - beta / math.sqrt(beta) * 0.5 * x) / math.sqrt(1.0 - beta)
    np.testing.assert_allclose(out, expected, rtol=1e-14)


@pytest.mark.parametrize("method", METHODS)
def test_sampling_is_deterministic_given_seed(method):
    head = make_head(method, 2, seed=3, **SMALL)
    solver = SolverConfig(steps=10)
    a = head.sample(5, rng=np.random.default_rng(4), solver=solver)
    b = head.sample(5, rng=np.random.default_rng(4), solver=solver)
    np.testing.assert_array_equal(a, b)


# -- SGM ---------------------------------------------------------------------------------


def test_sgm_oracle_score_gives_zero_loss():
    head = make_head("sgm", 2, **SMALL)
    rng = np.random.default_rng(5)
    x1, eps = rng.standard_normal((2, 500, 2))
    s = rng.uniform(1e-3, 1.0, 500)
    m = vp_mean_coeff(s)[:, None]
    head.nets["eps"] = _const_net(-eps / np.sqrt(1.0 - m * m))
    assert float(sgm_loss(head, x1, s=s, eps=eps).data) < 1e-20


def test_sgm_weighted_loss_bounded_near_zero_time():
    head = make_head("sgm", 2, **SMALL)
    head.nets["eps"] = _zero_net
    rng = np.random.default_rng(6)
    x1, eps = rng.standard_normal((2, 20000, 2))
    for s0 in (1e-3, 1e-2, 0.5):
        m = vp_mean_coeff(s0)
        # the raw target grows like (1 - m^2)^(-1/2) but the weighted residual stays E|eps|^2
        assert 1.0 / math.sqrt(1.0 - m * m) > 1.0
        loss = float(sgm_loss(head, x1, s=np.full(20000, s0), eps=eps).data)
        assert loss == pytest.approx(2.0, rel=0.05)


def test_sgm_probability_flow_uses_randomness_only_at_start():
    head = make_head("sgm", 2, seed=7, **SMALL)
    rng = np.random.default_rng(8)
    sgm_sample(head, 6, rng=rng, solver=SolverConfig(steps=20), probability_flow=True)
    reference = np.random.default_rng(8)
    reference.standard_normal((6, 2))
    assert rng.standard_normal() == reference.standard_normal()


# -- FM ---------------------------------------------------------------------------------


def test_fm_oracle_and_unit_sigma_path():
    head = make_head("fm", 2, sigma_min=1.0, **SMALL)
    rng = np.random.default_rng(9)
    x1, eps = rng.standard_normal((2, 100, 2))
    s = rng.uniform(0.0, 1.0, 100)
    # with sigma_min = 1 the conditional field is x1 at every time
    head.nets["eps"] = _const_net(x1)
    assert float(fm_loss(head, x1, s=s, eps=eps).data) < 1e-28


# -- SI loss -----------------------------------------------------------------------------


def _si_setup(seed=10, n=200):
    head = make_head("si", 2, interp="linear", gamma="sqrt", seed=seed, **SMALL)
    rng = np.random.default_rng(seed)
    x0, x1, z = rng.standard_normal((3, n, 2))
    s, w = importance_times(n, rng, 1e-3)
    return head, x0, x1, z, s, w


def test_si_loss_attains_minimum_form_under_oracle_nets():
    head, x0, x1, z, s, w = _si_setup()
    a, b, g = (c[:, None] for c in head.schedule.coefficients(s))
    ad, bd, gd = (c[:, None] for c in head.schedule.derivatives(s))
    target = ad * x0 + bd * x1 + gd * z
    head.nets["b"] = _const_net(target)
    head.nets["z"] = _const_net(z)
    loss_b, loss_s = si_loss(head, x0, x1, s=s, z=z, weights=w, antithetic=False)
    assert float(loss_b.data) == pytest.approx(np.mean(w * -0.5 * (target**2).sum(1)), rel=1e-12)
    assert float(loss_s.data) == pytest.approx(np.mean(w * -0.5 * (z**2).sum(1)), rel=1e-12)


def test_si_loss_zero_nets():
    head, x0, x1, z, s, w = _si_setup()
    head.nets["b"] = _zero_net
    head.nets["z"] = _zero_net
    for antithetic in (True, False):
        loss_b, loss_s = si_loss(head, x0, x1, s=s, z=z, weights=w, antithetic=antithetic)
        assert float(loss_b.data) == 0.0 and float(loss_s.data) == 0.0


def test_importance_weights_are_reciprocal_beta_density():
    s, w = importance_times(1000, np.random.default_rng(11), 1e-3)
    assert np.all((s >= 1e-3) & (s <= 1.0 - 1e-3))
    pdf = s ** -0.9 * (1.0 - s) ** -0.9 / math.gamma(0.1) ** 2 * math.gamma(0.2)
    np.testing.assert_allclose(w, 1.0 / pdf, rtol=1e-10)


def test_antithetic_pairing_keeps_mean_and_cuts_variance():
    head = make_head("si", 1, seed=12, **SMALL)
    rng = np.random.default_rng(13)
    paired, plain = [], []
    for _ in range(1000):
        x0, x1 = rng.standard_normal((2, 16, 1))
        s = rng.uniform(0.05, 0.95, 16)
        z = rng.standard_normal((16, 1))
        for out, anti in ((paired, True), (plain, False)):
            lb, ls = si_loss(head, x0, x1, s=s, z=z, antithetic=anti)
            out.append(float(lb.data) + float(ls.data))
    paired, plain = np.array(paired), np.array(plain)
    se = math.sqrt(plain.var() / plain.size + paired.var() / paired.size)
    assert abs(paired.mean() - plain.mean()) < 4.0 * se
    assert paired.var() < plain.var()


def test_vanilla_mode_only_swaps_the_source():
    cond_head = make_head("si", 2, seed=14, **SMALL)
    vanilla = make_head("si", 2, vanilla=True, seed=14, **SMALL)
    assert cond_head.uses_source and not vanilla.uses_source
    assert cond_head.store.state_dict().keys() == vanilla.store.state_dict().keys()
    for name, value in cond_head.store.state_dict().items():
        np.testing.assert_array_equal(value, vanilla.store.state_dict()[name])
    x1 = np.random.default_rng(15).standard_normal((32, 2))
    ignored = np.full((32, 2), 100.0)
    # vanilla draws its source from the rng first; replay that draw for the conditional head
    noise = np.random.default_rng(16).standard_normal((32, 2))
    rng_v, rng_c = np.random.default_rng(16), np.random.default_rng(16)
    rng_c.standard_normal((32, 2))
    lv = float(vanilla.loss(x1, x0=ignored, rng=rng_v).data)
    lc = float(cond_head.loss(x1, x0=noise, rng=rng_c).data)
    assert lv == lc


# -- integrator -------------------------------------------------------------------------


def test_euler_maruyama_constant_path():
    path = euler_maruyama(lambda s, x: 0.0, lambda s, x: 0.0, np.ones(3), np.linspace(0, 1, 11))
    assert path.shape == (11, 3) and np.all(path == 1.0)


def test_euler_maruyama_exponential_decay():
    x1 = euler_maruyama(lambda s, x: -x, lambda s, x: 0.0, np.array([1.0]),
                        np.linspace(0.0, 1.0, 1001), return_path=False)
    assert abs(x1[0] - math.exp(-1.0)) < 1e-3


def test_euler_maruyama_brownian_variance():
    x1 = euler_maruyama(lambda s, x: 0.0, lambda s, x: math.sqrt(2.0), np.zeros(10000),
                        np.linspace(0.0, 1.0, 101), rng=0, return_path=False)
    assert x1.var() == pytest.approx(2.0, rel=0.05)


def test_euler_maruyama_reports_divergence_step():
    with pytest.raises(SolverDivergenceError) as info:
        euler_maruyama(lambda s, x: np.full_like(x, np.inf), lambda s, x: 0.0, np.ones(1),
                       np.linspace(0.0, 1.0, 10))
    assert info.value.step == 0
    with pytest.raises(ContractError):
        euler_maruyama(lambda s, x: 0.0, lambda s, x: 0.0, np.zeros(1), [0.0, 0.5, 0.5])


def test_solver_config_contract():
    grid = SolverConfig(steps=4, clip_delta=0.1).grid()
    np.testing.assert_allclose(grid, [0.1, 0.3, 0.5, 0.7, 0.9])
    for bad in (dict(steps=0), dict(epsilon=-1.0), dict(clip_delta=0.0), dict(clip_delta=0.2)):
        with pytest.raises(ContractError):
            SolverConfig(**bad)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 9))
def test_path_noise_follows_seed_permutation(root, n):
    noise = PathNoise.from_root(root, n)
    perm = np.random.default_rng(root).permutation(n)
    shuffled = PathNoise([noise.seeds[i] for i in perm])
    a, b = noise.standard_normal((n, 3)), shuffled.standard_normal((n, 3))
    np.testing.assert_array_equal(a[perm], b)


# -- closed-form interpolant with oracle fields -----------------------------------------------


def _oracle_si_head(interp="linear", gamma="sqrt"):
    head = make_head("si", 1, interp=interp, gamma=gamma, **SMALL)
    sched = head.schedule
    head.nets["b"] = _zero_net

    def z_oracle(x, s, cond):
        # E[z | x_s = x] = gamma(s) x for iid standard normal endpoints
        return Tensor(float(sched.coefficients(s)[2]) * np.asarray(x))

    head.nets["z"] = z_oracle
    return head


def test_closed_form_task_is_self_consistent():
    sched = InterpolantSchedule("linear", "sqrt")
    s = np.linspace(0.0, 1.0, 101)
    a, b, g = sched.coefficients(s)
    np.testing.assert_allclose(a * a + b * b + g * g, 1.0, atol=1e-14)


@pytest.mark.parametrize("eps", [0.0, 0.5, 1.0])
def test_oracle_forward_sde_preserves_standard_normal(eps):
    head = _oracle_si_head()
    x0 = np.random.default_rng(17).standard_normal((10000, 1))
    out = si_sample_forward(head, x0, solver=SolverConfig(200, eps), rng=18)
    assert abs(out.mean()) < 0.05 and abs(out.var() - 1.0) < 0.1
    if eps == 0.0:
        # b = 0 and no score term: the probability-flow map is the identity
        np.testing.assert_array_equal(out, x0)


def test_oracle_backward_round_trip():
    head = _oracle_si_head()
    x0 = np.random.default_rng(19).standard_normal((10000, 1))
    solver = SolverConfig(200, 0.5)
    back = si_sample_backward(head, si_sample_forward(head, x0, solver=solver, rng=20),
                              solver=solver, rng=21)
    assert abs(back.mean()) < 0.05 and abs(back.var() - 1.0) < 0.1


def test_forward_sampler_returns_full_path():
    head = _oracle_si_head()
    path = si_sample_forward(head, np.zeros((3, 1)), solver=SolverConfig(10, 0.5), rng=0,
                             return_path=True)
    assert path.shape == (11, 3, 1)


# -- trained heads on a 1-D Gaussian ------------------------------------------------------------


GAUSS_MEAN, GAUSS_STD = 3.0, 0.1


@pytest.fixture(scope="module")
def gaussian_models():
    data = GAUSS_MEAN + GAUSS_STD * np.random.default_rng(22).standard_normal((20000, 1))
    models = {}
    for method in METHODS:
        models[method] = GenerativeModel(
            method=method, hidden_dim=32, n_blocks=2, time_dim=8, n_iter=1500, batch_size=256,
            solver_steps=100, random_state=23,
        ).fit(data)
    return models


@pytest.mark.parametrize("method", METHODS)
def test_trained_head_recovers_gaussian_mean(gaussian_models, method):
    samples = gaussian_models[method].sample(2000, random_state=24)
    assert abs(samples.mean() - GAUSS_MEAN) < 0.2


@pytest.mark.parametrize("method", METHODS)
def test_sampler_self_convergence_under_step_doubling(gaussian_models, method):
    model = gaussian_models[method]
    coarse = model.sample(4000, random_state=25)
    model.set_params(solver_steps=200)
    try:
        fine = model.sample(4000, random_state=26)
    finally:
        model.set_params(solver_steps=100)
    assert wasserstein_1d(coarse, fine) < 0.05
