import numpy as np
import pytest
from scipy.special import logit

from itepred.glm import fit_ml
from itepred.penalty import (PenaltyConfig, cv_select, elastic_net_kkt, fit_elastic_net, fit_hgl,
                             fold_ids, hgl_kkt, lambda_grid, lambda_max, lambda_path,
                             latent_groups, penalty_factors)
from itepred.strategies import stitch_per_arm
from itepred.tabular import DesignSpec, build_design

from conftest import random_trial
from oracles import elastic_net_split, heldout_deviance_loop, ridge_newton


def hom(data):
    return build_design(data, DesignSpec(tuple(range(data.p)), ()))


def full(data):
    return build_design(data, DesignSpec.full(data.p))


def kkt(design, y, fit, config):
    pf = penalty_factors(design, config)
    return elastic_net_kkt(design.std, y.astype(float), design.offset_or_zero(), fit.beta_std,
                           config.lam, config.mixing, pf)


@pytest.mark.parametrize("family", ["ridge", "lasso", "elastic_net"])
def test_zero_penalty_matches_ml(family, trial):
    d = full(trial)
    ml = fit_ml(d, trial.outcome)
    fit = fit_elastic_net(d, trial.outcome, PenaltyConfig(family, 0.0, alpha=0.5))
    np.testing.assert_allclose(fit.beta, ml.beta, atol=1e-4)


def test_lasso_null_model_at_lambda_max(trial):
    d = hom(trial)
    cfg = PenaltyConfig("lasso")
    lmax = lambda_max(d, trial.outcome, cfg)
    # closed form at the intercept-only model
    ybar = trial.outcome.mean()
    expected = np.max(np.abs(d.std[:, 1:].T @ (trial.outcome - ybar))) / trial.n
    assert lmax == pytest.approx(expected, rel=1e-8)
    for lam in (lmax, 2 * lmax):
        fit = fit_elastic_net(d, trial.outcome, cfg.with_lambda(lam))
        assert np.all(fit.beta_std[1:] == 0)
        assert fit.coefficients.beta0 == pytest.approx(logit(ybar), abs=1e-8)


@pytest.mark.parametrize("seed", range(3))
def test_ridge_matches_newton_oracle(seed):
    data = random_trial(50, 3, seed=seed)
    d = hom(data)
    cfg = PenaltyConfig("ridge", 0.1)
    fit = fit_elastic_net(d, data.outcome, cfg)
    ref = ridge_newton(d.std, data.outcome.astype(float), 0.1, penalty_factors(d, cfg))
    np.testing.assert_allclose(fit.beta_std, ref, atol=1e-5)
    assert kkt(d, data.outcome, fit, cfg) <= 1e-7


@pytest.mark.parametrize("alpha,lam", [(1.0, 0.02), (0.5, 0.03), (0.2, 0.05)])
def test_elastic_net_matches_split_oracle(alpha, lam):
    data = random_trial(80, 4, seed=7)
    d = hom(data)
    cfg = PenaltyConfig("elastic_net", lam, alpha=alpha)
    fit = fit_elastic_net(d, data.outcome, cfg)
    assert kkt(d, data.outcome, fit, cfg) <= 1e-7
    ref = elastic_net_split(d.std, data.outcome.astype(float), lam, alpha, penalty_factors(d, cfg))
    np.testing.assert_allclose(fit.beta_std, ref, atol=1e-5)


def test_treatment_main_unpenalized_option(trial):
    d = hom(trial)
    cfg = PenaltyConfig("lasso", 10.0, penalize_treatment_main=False)
    fit = fit_elastic_net(d, trial.outcome, cfg)
    assert fit.beta_std[1] != 0 and np.all(fit.beta_std[2:] == 0)


def test_hgl_null_and_zero_penalty(trial):
    d = full(trial)
    cfg = PenaltyConfig("hierarchical_group_lasso")
    lmax = lambda_max(d, trial.outcome, cfg)
    fit = fit_hgl(d, trial.outcome, cfg.with_lambda(lmax * 1.01))
    assert np.all(fit.beta_std[1:] == 0)
    ml = fit_ml(d, trial.outcome)
    fit0 = fit_hgl(d, trial.outcome, cfg.with_lambda(0.0))
    np.testing.assert_allclose(fit0.beta, ml.beta, atol=1e-4)


def _hierarchy_ok(beta, roles, parents):
    t = roles.index("treatment")
    for j, r in enumerate(roles):
        if r == "interaction" and beta[j] != 0:
            if beta[parents[j]] == 0 or beta[t] == 0:
                return False
    return True


def test_hgl_hierarchy_vs_lasso():
    # strong x1-by-treatment interaction without an x1 main effect
    data = random_trial(800, 5, seed=3, beta=[0, 0.8, 0.4, 0, 0], bt=0.0,
                        bz=[-1.0, 0, 0, 0, 0])
    d = full(data)
    lasso_broke = False
    hgl_path = lambda_path(d, data.outcome, PenaltyConfig("hierarchical_group_lasso",
                                                          path_length=20))
    for fit in hgl_path.fits:
        assert _hierarchy_ok(fit.beta_std, d.roles, d.parents)
        groups = latent_groups(d, PenaltyConfig("hierarchical_group_lasso"))
        assert hgl_kkt(d, data.outcome, fit.meta["latent"], groups, fit.meta["lambda"]) <= 1e-6
        trace = fit.meta["objective_trace"]
        assert all(b <= a + 1e-12 * abs(a) for a, b in zip(trace, trace[1:]))
    assert any(fit.beta_std[6] != 0 for fit in hgl_path.fits)
    for fit in lambda_path(d, data.outcome, PenaltyConfig("lasso", path_length=20)).fits:
        lasso_broke |= not _hierarchy_ok(fit.beta_std, d.roles, d.parents)
    assert lasso_broke


def test_lambda_grid_and_path(trial):
    np.testing.assert_allclose(lambda_grid(2.0, 2, 1e-3), [2.0, 2e-3])
    d = full(trial)
    for family in ("lasso", "hierarchical_group_lasso"):
        path = lambda_path(d, trial.outcome, PenaltyConfig(family, path_length=15))
        assert np.all(np.diff(path.lambdas) < 0) and len(path.fits) == 15
        assert np.all(path.fits[0].beta_std[1:] == 0)
        dev = np.array([f.deviance for f in path.fits])
        assert np.all(np.diff(dev) <= 1e-8)
    with pytest.raises(ValueError):
        lambda_path(d, trial.outcome, PenaltyConfig("lasso", path_length=1))


def test_ridge_monotone_shrinkage(trial):
    d = full(trial)
    path = lambda_path(d, trial.outcome, PenaltyConfig("ridge", path_length=20,
                                                       lambda_min_ratio=1e-6))
    norms = [np.linalg.norm(f.beta_std[1:]) for f in path.fits]
    assert np.all(np.diff(norms) >= -1e-10)


def test_fold_ids():
    ids = fold_ids(103, 10, seed=4)
    counts = np.bincount(ids)[1:]
    assert set(ids) == set(range(1, 11)) and counts.max() - counts.min() <= 1
    np.testing.assert_array_equal(ids, fold_ids(103, 10, seed=4))
    with pytest.raises(ValueError):
        fold_ids(5, 10, 0)


def test_cv_single_lambda(trial):
    d = hom(trial)
    cv = cv_select(d, trial.outcome, PenaltyConfig("ridge"), k=5, seed=0, lambdas=[0.05])
    assert cv.chosen_lambda == 0.05 and cv.chosen_index == 0


def test_cv_deterministic_and_deviance_oracle(trial):
    d = full(trial)
    cfg = PenaltyConfig("lasso", path_length=8)
    a = cv_select(d, trial.outcome, cfg, k=5, seed=3)
    b = cv_select(d, trial.outcome, cfg, k=5, seed=3)
    np.testing.assert_array_equal(a.fold_assignments, b.fold_assignments)
    assert a.chosen_lambda == b.chosen_lambda
    assert a.chosen_lambda == a.lambdas[np.argmin(a.mean_deviance)]
    # recompute the held-out deviance curve with an independent loop
    y = trial.outcome
    total = np.zeros(len(a.lambdas))
    for f in range(1, 6):
        train = np.flatnonzero(a.fold_assignments != f)
        test = np.flatnonzero(a.fold_assignments == f)
        path = lambda_path(d.subset(train), y[train], cfg, a.lambdas, tol=1e-6)
        for i, fit in enumerate(path.fits):
            total[i] += heldout_deviance_loop(d.raw, y, fit.beta, test)
    np.testing.assert_allclose(a.mean_deviance, total / trial.n, rtol=0, atol=1e-10)


def test_cv_ties_prefer_larger_lambda(trial):
    d = hom(trial)
    cfg = PenaltyConfig("lasso")
    lmax = lambda_max(d, trial.outcome, cfg)
    # every lambda above lambda_max gives the same null model
    cv = cv_select(d, trial.outcome, cfg, k=4, seed=0, lambdas=[4 * lmax, 3 * lmax, 2 * lmax])
    assert cv.chosen_lambda == 4 * lmax


def test_penalized_per_arm_differs_from_interaction_model():
    data = random_trial(600, 4, seed=5, bt=-0.7, bz=[0.4, 0, 0, 0])
    lam = 0.02
    cfg = PenaltyConfig("lasso", lam)
    fit = fit_elastic_net(full(data), data.outcome, cfg)
    arms = []
    for a in (0, 1):
        sub = data.subset(np.flatnonzero(data.treatment == a))
        spec = DesignSpec(tuple(range(4)), (), include_treatment=False)
        arms.append(fit_elastic_net(build_design(sub, spec), sub.outcome, cfg).coefficients)
    stitched, _ = stitch_per_arm(arms[0], arms[1], tuple(range(4)))
    assert np.max(np.abs(stitched.as_vector() - fit.beta)) > 1e-3


@pytest.mark.parametrize("family", ["ridge", "lasso", "hierarchical_group_lasso"])
def test_row_permutation_invariance(family, trial):
    perm = np.random.default_rng(1).permutation(trial.n)
    cfg = PenaltyConfig(family, 0.01)
    a = fit_elastic_net(full(trial), trial.outcome, cfg) if family != "hierarchical_group_lasso" \
        else fit_hgl(full(trial), trial.outcome, cfg)
    sub = trial.subset(perm)
    b = fit_elastic_net(full(sub), sub.outcome, cfg) if family != "hierarchical_group_lasso" \
        else fit_hgl(full(sub), sub.outcome, cfg)
    np.testing.assert_allclose(a.beta, b.beta, atol=1e-6)


def test_penalty_config_validation():
    with pytest.raises(ValueError):
        PenaltyConfig("scad")
    with pytest.raises(ValueError):
        PenaltyConfig("lasso", -1.0)
    with pytest.raises(ValueError):
        PenaltyConfig("elastic_net", alpha=1.5)
