import numpy as np
import pytest

from recnac.checks import central_difference
from recnac.indrnn import ProjectionRadii, init_symmetric
from recnac.policy import SoftmaxRnnPolicy
from recnac.pomdp import sample_trajectory
from recnac.rec_npg import (NacConfig, cfa_grad, cfa_loss, cfa_loss_sample, npg_diagnostics,
                            npg_update, path_terms, projected_sgd, run_rec_nac)


def test_cfa_loss_and_gradient():
    rng = np.random.default_rng(0)
    scores = rng.standard_normal((4, 3, 2))
    adv = rng.standard_normal(4)
    omega = rng.standard_normal((3, 2))
    resid = np.einsum("tij,ij->t", scores, omega) - adv
    assert cfa_loss(scores, adv, omega, 0.7) == pytest.approx(np.sum(0.7 ** np.arange(4) * resid ** 2))
    fd = central_difference(lambda w: cfa_loss(scores, adv, w, 0.7), omega)
    np.testing.assert_allclose(cfa_grad(scores, adv, omega, 0.7), fd, atol=1e-7)


def test_cfa_loss_sample_validates_shapes(tiny, tiny_fm):
    actor = SoftmaxRnnPolicy(init_symmetric(4, tiny_fm.d, 0.5, 0), tiny_fm)
    traj = sample_trajectory(tiny, actor, 2, 0)
    omega = np.zeros(actor.net.theta.shape)
    assert cfa_loss_sample(actor, [1.0, 0.0, 0.5], traj, omega, 0.5, 3) == pytest.approx(1.0 + 0.25 * 0.25)
    with pytest.raises(ValueError):
        cfa_loss_sample(actor, [1.0, 0.0], traj, omega, 0.5, 3)
    with pytest.raises(ValueError):
        cfa_loss_sample(actor, [1.0, 0.0, 0.5], traj, np.zeros((2, 2)), 0.5, 3)


def test_projected_sgd_solves_full_batch_least_squares():
    # a random full-batch CFA problem whose minimizer lies inside the ball
    rng = np.random.default_rng(1)
    n, m, d = 40, 4, 2
    scores = rng.standard_normal((n, m, d + 1)) / np.sqrt(m)
    target = 0.1 * rng.standard_normal((m, d + 1))
    adv = np.einsum("tij,ij->t", scores, target) + 0.05 * rng.standard_normal(n)
    gamma = 0.95
    wts = np.sqrt(gamma ** np.arange(n))
    X = scores.reshape(n, -1) * wts[:, None]
    best = np.linalg.lstsq(X, adv * wts, rcond=None)[0].reshape(m, d + 1)
    radii = ProjectionRadii(10.0, 10.0)
    assert np.max(np.abs(best)) < 10 / np.sqrt(m)
    omega = projected_sgd(lambda w: cfa_grad(scores, adv, w, gamma), (m, d + 1), 2000, 0.05, radii)
    opt = cfa_loss(scores, adv, best, gamma)
    assert cfa_loss(scores, adv, omega, gamma) <= 1.05 * opt


def test_projected_sgd_respects_ball():
    radii = ProjectionRadii(0.1, 0.1)
    omega = projected_sgd(lambda w: -np.ones_like(w), (4, 3), 50, 1.0, radii)
    assert np.max(np.abs(omega[:, 0])) <= 0.05 + 1e-12
    assert np.max(np.linalg.norm(omega[:, 1:], axis=1)) <= 0.05 + 1e-12


def test_npg_update_is_unprojected():
    net = init_symmetric(4, 2, 0.5, 0)
    moved = npg_update(net, np.full(net.theta.shape, 100.0), 0.5)
    np.testing.assert_allclose(moved.deviation(), 50.0)


def test_path_terms_shapes(tiny, tiny_fm):
    actor = SoftmaxRnnPolicy(init_symmetric(4, tiny_fm.d, 0.5, 0), tiny_fm)
    critic = init_symmetric(6, tiny_fm.d, 0.5, 1)
    traj = sample_trajectory(tiny, actor, 4, 0)
    scores, adv = path_terms(actor, critic, traj, 5)
    assert scores.shape == (5, 4, tiny_fm.d + 1) and adv.shape == (5,)
    np.testing.assert_allclose(adv, 0.0, atol=1e-14)  # null critic at init


@pytest.mark.parametrize("kw", [dict(m_actor=3), dict(m_critic=5), dict(eta_td=0.0),
                                dict(eta_npg=-1.0), dict(value_eval="exact")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        NacConfig(**kw)


def test_default_step_sizes():
    cfg = NacConfig(n_outer=25, k_sgd=100)
    assert cfg.npg_step == pytest.approx(0.2)
    assert cfg.sgd_step == pytest.approx(0.01)


def test_short_run_is_reproducible(tiny, tiny_fm, tmp_path):
    cfg = NacConfig(n_outer=3, k_td=20, k_sgd=20, T=3, m_actor=4, m_critic=6, n_value_rollouts=20)
    a = run_rec_nac(tiny, tiny_fm, cfg)
    b = run_rec_nac(tiny, tiny_fm, cfg)
    assert len(a) == 3
    np.testing.assert_array_equal(a.column("value_est"), b.column("value_est"))
    np.testing.assert_array_equal(a.actor.theta, b.actor.theta)
    assert np.all(np.diff(a.column("n")) == 1)
    a.to_csv(tmp_path / "nac.csv")
    assert (tmp_path / "nac.csv").read_text().startswith("n,value_est,critic_mstd,cfa_loss,omega_norm,phi_dev")


def test_actor_moves_by_npg_step(tiny, tiny_fm):
    cfg = NacConfig(n_outer=1, k_td=10, k_sgd=10, T=3, m_actor=4, m_critic=6, value_eval="none",
                    eta_npg=0.3)
    trace = run_rec_nac(tiny, tiny_fm, cfg)
    rec = trace.records[0]
    assert rec.phi_dev == pytest.approx(0.3 * rec.omega_norm)
    assert np.isnan(rec.value_est)


def test_diagnostics_regimes():
    short = npg_diagnostics(NacConfig(alpha_actor=0.5, m_actor=64), n_actions=2)
    assert short["regime"] == "short-term"
    assert short["alpha_m_rho1"] == pytest.approx(0.5 + 2 / 8)
    assert short["p_T"] == pytest.approx(sum(0.75 ** k for k in range(6)))
    long = npg_diagnostics(NacConfig(alpha_actor=1.2, m_actor=64), n_actions=2)
    assert long["regime"] == "long-term"
    assert long["linearization_term"] > short["linearization_term"]
    assert short["truncation_term"] == pytest.approx(0.5 ** 6 / 0.25)
