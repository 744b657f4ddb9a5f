import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coxvae import autodiff as ad
from coxvae.errors import ConfigError, DomainError
from coxvae.model import (
    CoxVAE,
    LatentGaussian,
    SurvivalBatch,
    combined_loss,
    cox_head,
    cox_partial_nll,
    elbo_loss,
    hazard_ratio,
    kl_divergence,
    recon_nll,
    reparameterize,
)
from coxvae.network import Linear
from coxvae.survstats import SurvivalTable, cox_nll_oracle

from conftest import numerical_grad, rel_err


def lg(mu, logvar):
    return LatentGaussian(ad.Tensor(np.asarray(mu, float), requires_grad=True),
                          ad.Tensor(np.asarray(logvar, float), requires_grad=True))


def random_survival(rng, n, censor=0.2, ties=True):
    pool = rng.integers(1, max(3, n // 2), size=n) if ties else rng.permutation(n) + 1
    time = pool.astype(float) * 10.0
    event = (rng.uniform(size=n) > censor).astype(int)
    return time, event


# reparameterize

def test_reparameterize_eps_zero_is_mu():
    g = lg([[1.0, -2.0]], [[0.3, -1.0]])
    np.testing.assert_array_equal(reparameterize(g, np.zeros((1, 2))).data, [[1.0, -2.0]])


def test_reparameterize_clamped_logvar():
    eps = np.array([[1.7, -0.4]])
    z = reparameterize(lg([[0.5, 0.5]], [[-10.0, -10.0]]), eps)
    assert np.all(np.abs(z.data - 0.5) <= 0.007 * np.abs(eps))


def test_reparameterize_monte_carlo_mean():
    rng = np.random.default_rng(0)
    n = 100_000
    z = reparameterize(lg(np.ones((n, 1)), np.zeros((n, 1))), rng.standard_normal((n, 1)))
    assert abs(z.data.mean() - 1.0) < 0.01


def test_reparameterize_gradient_flows_to_mu_and_logvar():
    g = lg([[0.2]], [[0.4]])
    ad.backward(ad.sum(reparameterize(g, np.array([[1.5]]))))
    assert g.mu.grad[0, 0] == 1.0
    assert g.logvar.grad[0, 0] == pytest.approx(0.5 * math.exp(0.2) * 1.5)


# KL

def test_kl_closed_form_cases():
    assert kl_divergence(lg([[0.0, 0.0]], [[0.0, 0.0]])).item() == 0.0
    assert kl_divergence(lg([[1.0, 0.0]], [[0.0, 0.0]])).item() == pytest.approx(0.5)
    expected = 0.5 * (4 - 1 - math.log(4))
    assert kl_divergence(lg([[0.0]], [[math.log(4)]])).item() == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(0.8069, abs=1e-4)


@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), st.lists(st.floats(-10, 10), min_size=4, max_size=4))
def test_kl_nonnegative(mu, logvar):
    assert kl_divergence(lg(np.reshape(mu, (2, 2)), np.reshape(logvar, (2, 2)))).item() >= -1e-12


# reconstruction

def test_recon_trivial_cases():
    assert recon_nll(ad.Tensor(np.zeros((2, 3))), np.full((2, 3), 0.5)).item() == pytest.approx(3 * math.log(2))
    assert recon_nll(ad.Tensor(np.full((1, 4), 50.0)), np.ones((1, 4))).item() < 1e-20
    with pytest.raises(DomainError):
        recon_nll(ad.Tensor(np.zeros((1, 2))), np.array([[0.5, 1.2]]))


def test_recon_matches_direct_formula():
    rng = np.random.default_rng(1)
    logits = rng.uniform(-4, 4, size=(5, 7))
    x = rng.uniform(size=(5, 7))
    p = 1 / (1 + np.exp(-logits))
    direct = -(x * np.log(p) + (1 - x) * np.log(1 - p)).sum() / 5
    assert abs(recon_nll(ad.Tensor(logits), x).item() - direct) <= 1e-10 * direct


def test_gaussian_likelihood_option():
    logits = np.zeros((2, 2))
    x = np.array([[0.5, 1.0], [0.0, 0.5]])
    assert recon_nll(ad.Tensor(logits), x, "gaussian").item() == pytest.approx(0.5 * 0.5 / 2)


# ELBO

def test_elbo_beta_linearity():
    g = lg([[0.3, -0.2]], [[0.1, 0.4]])
    logits = ad.Tensor(np.array([[0.2, -0.1, 0.5]]))
    x = np.array([[0.1, 0.9, 0.4]])
    rec = recon_nll(logits, x).item()
    kl = kl_divergence(g).item()
    assert elbo_loss(g, logits, x, 0.0).item() == rec
    assert elbo_loss(g, logits, x, 2.0).item() - elbo_loss(g, logits, x, 0.0).item() == pytest.approx(2 * kl)
    prior = lg([[0.0, 0.0]], [[0.0, 0.0]])
    assert elbo_loss(prior, logits, x, 1.0).item() == rec
    with pytest.raises(ConfigError):
        elbo_loss(g, logits, x, -1.0)


# Cox head

def test_cox_head():
    head = Linear(3, 1, np.random.default_rng(0), bias=False)
    head.weight.data[:] = 0.0
    np.testing.assert_array_equal(cox_head(head, np.ones((4, 3))).data, np.zeros(4))
    one = Linear(1, 1, np.random.default_rng(0), bias=False)
    one.weight.data[:] = 2.0
    assert cox_head(one, np.array([[3.0]])).data[0] == 6.0
    with pytest.raises(ConfigError):
        cox_head(Linear(3, 1, np.random.default_rng(0)), np.ones((1, 3)))


def test_hazard_ratio_per_unit_is_exp_weight():
    head = Linear(2, 1, np.random.default_rng(0), bias=False)
    z = np.array([[0.3, -1.0], [1.3, -1.0]])
    r = cox_head(head, z).data
    assert math.exp(r[1] - r[0]) == pytest.approx(math.exp(head.weight.data[0, 0]))


# Cox partial likelihood

def test_cox_single_event_is_zero():
    loss, d = cox_partial_nll(ad.Tensor(np.array([1.7])), [5.0], [1])
    assert loss.item() == 0.0 and d == 1


def test_cox_two_events_hand_expansion():
    loss, _ = cox_partial_nll(ad.Tensor(np.zeros(2)), [1.0, 2.0], [1, 1])
    assert loss.item() == pytest.approx(0.5 * math.log(2), abs=1e-15)


def test_cox_all_censored_is_flagged():
    loss, d = cox_partial_nll(ad.Tensor(np.ones(3), requires_grad=True), [1.0, 2.0, 3.0], [0, 0, 0])
    assert d == 0 and loss.item() == 0.0 and not loss.requires_grad


def test_cox_rejects_nonpositive_time():
    with pytest.raises(DomainError):
        cox_partial_nll(ad.Tensor(np.zeros(2)), [0.0, 1.0], [1, 1])


def test_cox_breslow_ties_share_risk_set():
    # both tied events see the full tied risk set {0, 1, 2}
    r = np.array([0.2, -0.4, 1.0])
    loss, _ = cox_partial_nll(ad.Tensor(r), [3.0, 3.0, 3.0], [1, 1, 0])
    lse = math.log(np.exp(r).sum())
    assert loss.item() == pytest.approx(-((r[0] - lse) + (r[1] - lse)) / 2, abs=1e-14)


def test_cox_matches_oracle_random():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(1, 51))
        time, event = random_survival(rng, n)
        r = rng.normal(size=n) * 2
        fast, d1 = cox_partial_nll(ad.Tensor(r), time, event)
        slow, d2 = cox_nll_oracle(r, SurvivalTable(time, event))
        assert d1 == d2
        assert fast.item() == pytest.approx(slow, rel=1e-10, abs=1e-13)


@settings(max_examples=50)
@given(st.integers(2, 30), st.floats(-100, 100), st.integers(0, 10_000))
def test_cox_shift_invariance(n, c, seed):
    rng = np.random.default_rng(seed)
    time, event = random_survival(rng, n)
    r = rng.normal(size=n)
    a, _ = cox_partial_nll(ad.Tensor(r), time, event)
    b, _ = cox_partial_nll(ad.Tensor(r + c), time, event)
    assert abs(a.item() - b.item()) <= 1e-12 * max(1.0, abs(a.item()))


def test_cox_invariant_to_monotone_time_transform():
    rng = np.random.default_rng(3)
    time, event = random_survival(rng, 25)
    r = rng.normal(size=25)
    a, _ = cox_partial_nll(ad.Tensor(r), time, event)
    b, _ = cox_partial_nll(ad.Tensor(r), np.exp(time / 50.0) + time**2, event)
    assert a.item() == b.item()


def test_cox_gradient_analytic_and_numeric():
    rng = np.random.default_rng(4)
    n = 20
    time, event = random_survival(rng, n)
    r = rng.normal(size=n)
    t = ad.Tensor(r.copy(), requires_grad=True)
    loss, d = cox_partial_nll(t, time, event)
    ad.backward(loss)
    # analytic: -(1/D) [delta_i - sum_{k: t_k <= t_i, delta_k=1} exp(r_i) / sum_{j: t_j >= t_k} exp(r_j)]
    analytic = np.empty(n)
    for i in range(n):
        s = sum(math.exp(r[i]) / np.exp(r[time >= time[k]]).sum()
                for k in range(n) if event[k] == 1 and time[k] <= time[i])
        analytic[i] = -(event[i] - s) / d
    numeric = numerical_grad(lambda: cox_nll_oracle(r, SurvivalTable(time, event))[0], r)
    assert rel_err(t.grad, analytic) < 1e-10
    assert rel_err(t.grad, numeric) < 1e-6


# combined loss

def test_combined_loss_mixture():
    e, c = ad.Tensor(3.0), ad.Tensor(1.0)
    assert combined_loss(e, c, 1.0).item() == 3.0
    assert combined_loss(e, c, 0.0).item() == 1.0
    assert combined_loss(e, c, 0.5).item() == 2.0
    with pytest.raises(ConfigError):
        combined_loss(e, c, 1.5)


@given(st.floats(0, 1), st.floats(0, 1))
def test_combined_loss_affine_in_tau(t1, t2):
    e, c = ad.Tensor(4.5), ad.Tensor(-0.75)
    diff = combined_loss(e, c, t2).item() - combined_loss(e, c, t1).item()
    assert diff == pytest.approx((t2 - t1) * (4.5 + 0.75), abs=1e-12)


def test_hazard_ratio_values():
    ratio, pct = hazard_ratio(0.109)
    assert ratio == pytest.approx(1.1152, abs=5e-5)
    assert round(pct, 1) == 11.5
    assert hazard_ratio(0.0) == (1.0, 0.0)
    ratio, pct = hazard_ratio(-0.109)
    assert ratio == pytest.approx(math.exp(-0.109))
    assert ratio == pytest.approx(0.8967, abs=5e-5) and round(pct, 1) == -10.3


# full model

def _toy_batch(rng, n=8, p=16):
    time = rng.uniform(10, 500, size=n)
    event = np.r_[1, 1, rng.integers(0, 2, size=n - 2)]
    return SurvivalBatch(rng.uniform(size=(n, p)), time, event)


def test_loss_report_consistency():
    rng = np.random.default_rng(5)
    model = CoxVAE(16, latent_dim=3, width=8, n_blocks=1, seed=1)
    batch = _toy_batch(rng)
    tau, beta = 0.3, 1.7
    total, rep = model.loss(batch, rng.standard_normal((8, 3)), tau, beta)
    assert rep.total == total.item()
    assert rep.total == pytest.approx(tau * (rep.recon_nll + beta * rep.kl) + (1 - tau) * rep.cox_nll, rel=1e-14)
    assert rep.n_events_in_batch == int(batch.event.sum())


@pytest.mark.parametrize("tau, silent", [(1.0, "cox."), (0.0, "decoder.")])
def test_gradient_routing(tau, silent):
    rng = np.random.default_rng(6)
    model = CoxVAE(16, latent_dim=3, width=8, n_blocks=1, seed=1)
    total, _ = model.loss(_toy_batch(rng), rng.standard_normal((8, 3)), tau)
    ad.backward(total)
    for name, p in model.named_parameters().items():
        if name.startswith(silent):
            assert np.all(p.grad == 0), name
        elif name.startswith("encoder.") and not name.endswith("bias"):
            assert np.any(p.grad != 0), name


def test_all_censored_batch_applies_only_elbo():
    rng = np.random.default_rng(7)
    model = CoxVAE(16, latent_dim=3, width=8, n_blocks=1, seed=1)
    batch = _toy_batch(rng)
    batch.event[:] = 0
    eps = rng.standard_normal((8, 3))
    total, rep = model.loss(batch, eps, 0.4)
    assert rep.n_events_in_batch == 0 and rep.cox_nll == 0.0
    assert rep.total == pytest.approx(0.4 * (rep.recon_nll + rep.kl))
    ad.backward(total)
    assert model.cox.weight.grad is None  # not reachable from the loss
