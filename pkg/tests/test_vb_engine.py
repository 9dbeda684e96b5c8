import numpy as np
import pytest

from wsbm.expfam import FamilyKind, default_prior, posterior_mean
from wsbm.netgraph import ObservedNetwork
from wsbm.synthgen import GeneratorSpec, nmi, sample
from wsbm.vb_engine import (
    BundlePosteriors,
    FitResult,
    ModelConfig,
    Stopping,
    belief_fields,
    compile_problem,
    elbo,
    expected_stats,
    fit,
    init_beliefs,
    run_restarts,
    substream_seeds,
    update_beliefs,
    update_bundles,
)

from conftest import dense_field, dense_stats, random_network

WEIGHT_FAMILIES = [FamilyKind.NORMAL, FamilyKind.POISSON, FamilyKind.EXPONENTIAL]


def _config(K, alpha, ef, wf):
    return ModelConfig(K=K, alpha=alpha, existence_family=ef, weight_family=wf)


# -- expected statistics and gradients ---------------------------------------

def test_expected_stats_hard_and_uniform():
    net = ObservedNetwork(2, [0], [1], [2.5])
    cfg = ModelConfig(K=2, alpha=0.5)
    Tw = expected_stats(net, np.eye(2), cfg, "weight")
    np.testing.assert_array_equal(Tw[0, 1], [2.5, 6.25, 1, 1])
    assert np.count_nonzero(Tw[[0, 1, 1], [0, 0, 1]]) == 0
    Tw = expected_stats(net, np.full((2, 2), 0.5), cfg, "weight")
    for z in range(2):
        for zp in range(2):
            np.testing.assert_allclose(Tw[z, zp], np.array([2.5, 6.25, 1, 1]) / 4)


@pytest.mark.parametrize("ef", [FamilyKind.BERNOULLI, FamilyKind.DC])
@pytest.mark.parametrize("directed", [True, False])
@pytest.mark.parametrize("self_loops", [False, True])
def test_sparse_stats_match_dense(ef, directed, self_loops):
    rng = np.random.default_rng(17)
    for trial in range(10):
        n = int(rng.integers(2, 21))
        K = int(rng.integers(1, 5))
        net = random_network(rng, n, p_edge=rng.uniform(0.1, 0.7), p_missing=rng.uniform(0, 0.3),
                             directed=directed, self_loops=self_loops)
        cfg = _config(K, 0.5, ef, FamilyKind.NORMAL)
        mu = rng.dirichlet(np.ones(K), n)
        Te, Tw = expected_stats(net, mu, cfg)
        De, Dw = dense_stats(net, mu, cfg)
        np.testing.assert_allclose(Te, De, rtol=0, atol=1e-10)
        np.testing.assert_allclose(Tw, Dw, rtol=0, atol=1e-10)


@pytest.mark.parametrize("ef", [FamilyKind.BERNOULLI, FamilyKind.DC])
@pytest.mark.parametrize("wf", WEIGHT_FAMILIES + [None])
@pytest.mark.parametrize("directed", [True, False])
def test_sparse_gradient_matches_dense(ef, wf, directed):
    rng = np.random.default_rng(23)
    for trial in range(8):
        n = int(rng.integers(2, 21))
        K = int(rng.integers(1, 5))
        alpha = 1.0 if wf is None else float(rng.choice([0.0, 0.3, 0.5, 1.0]))
        net = random_network(rng, n, p_edge=rng.uniform(0.1, 0.7), p_missing=rng.uniform(0, 0.3),
                             directed=directed, weight_family=wf)
        cfg = _config(K, alpha, ef, wf)
        mu = rng.dirichlet(np.ones(K), n)
        post = update_bundles(net, rng.dirichlet(np.ones(K), n), cfg)
        g = belief_fields(compile_problem(net, cfg), mu, post)
        np.testing.assert_allclose(g, dense_field(net, mu, post, cfg), rtol=0, atol=1e-10)


def test_alpha_scaling_on_hard_assignment():
    net = ObservedNetwork(3, [0, 1], [1, 2], [1.0, -2.0])
    mu = np.array([[1.0, 0], [0, 1.0], [0, 1.0]])
    cfg = ModelConfig(K=2, alpha=0.5)
    post = update_bundles(net, mu, cfg)
    p = compile_problem(net, cfg)
    Te, Tw = dense_stats(net, mu, cfg)
    np.testing.assert_allclose(post.tau_e, p.prior_e + 0.5 * Te, atol=1e-15)
    np.testing.assert_allclose(post.tau_w, p.prior_w + 0.5 * Tw, atol=1e-15)


def test_alpha_one_leaves_weight_prior():
    rng = np.random.default_rng(0)
    net = random_network(rng, 10)
    cfg = ModelConfig(K=3, alpha=1.0)
    post = update_bundles(net, rng.dirichlet(np.ones(3), 10), cfg)
    prior = default_prior(FamilyKind.NORMAL, net.w_weight)
    assert np.all(post.tau_w == prior)


def test_empty_network_keeps_priors_and_zero_elbo():
    net = ObservedNetwork(2, [], [], [], [0, 1], [1, 0])
    cfg = ModelConfig(K=3, alpha=0.5)
    mu = np.full((2, 3), 1 / 3)
    post = update_bundles(net, mu, cfg)
    p = compile_problem(net, cfg)
    assert np.all(post.tau_e == p.prior_e) and np.all(post.tau_w == p.prior_w)
    assert elbo(net, mu, post, cfg) == pytest.approx(0.0, abs=1e-12)


# -- belief updates -------------------------------------------------------------

def test_single_vertex_gets_prior():
    res = fit(ObservedNetwork(1, [], [], []), ModelConfig(K=3), seed=0)
    np.testing.assert_allclose(res.beliefs, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)
    mu0 = [0.2, 0.5, 0.3]
    res = fit(ObservedNetwork(1, [], [], []), ModelConfig(K=3, mu0=mu0), seed=0)
    np.testing.assert_allclose(res.beliefs[0], mu0, atol=1e-15)


def test_automorphic_vertices_share_beliefs():
    # vertices 0 and 1 play identical roles (swap them and the network is unchanged)
    src = [0, 1, 2, 2, 3]
    dst = [2, 2, 0, 1, 2]
    w = [1.0, 1.0, -0.5, -0.5, 2.0]
    net = ObservedNetwork(4, src, dst, w)
    cfg = ModelConfig(K=2, alpha=0.5)
    rng = np.random.default_rng(1)
    post = update_bundles(net, rng.dirichlet(np.ones(2), 4), cfg)
    mu = update_beliefs(net, post, cfg, rng.dirichlet(np.ones(2), 4), Stopping(inner_tol=1e-14, max_inner=5000))
    np.testing.assert_allclose(mu[0], mu[1], atol=1e-10)


def test_belief_fixed_point_matches_grid_search():
    rng = np.random.default_rng(4)
    net = random_network(rng, 5, p_edge=0.5)
    cfg = ModelConfig(K=2, alpha=0.5)
    post = update_bundles(net, rng.dirichlet(np.ones(2), 5), cfg)
    mu = update_beliefs(net, post, cfg, rng.dirichlet(np.ones(2), 5), Stopping(inner_tol=1e-13, max_inner=5000))
    grid = np.linspace(0.0, 1.0, 1001)
    for i in range(5):
        vals = []
        for x in grid:
            m = mu.copy()
            m[i] = [x, 1 - x]
            vals.append(elbo(net, m, post, cfg))
        assert abs(grid[int(np.argmax(vals))] - mu[i, 0]) <= 1e-3


# -- evidence bound --------------------------------------------------------------

def test_group_relabelling_leaves_elbo_unchanged():
    rng = np.random.default_rng(9)
    net = random_network(rng, 12)
    K = 3
    cfg = ModelConfig(K=K, alpha=0.5)
    mu = rng.dirichlet(np.ones(K), 12)
    post = update_bundles(net, mu, cfg)
    s = np.array([2, 0, 1])
    perm_post = BundlePosteriors(post.tau_e[np.ix_(s, s)], post.tau_w[np.ix_(s, s)],
                                 post.eta_e[np.ix_(s, s)], post.eta_w[np.ix_(s, s)])
    assert elbo(net, mu[:, s], perm_post, cfg) == pytest.approx(elbo(net, mu, post, cfg), abs=1e-10)


def _random_instance(rng):
    n = int(rng.integers(4, 31))
    K = int(rng.integers(1, 5))
    wf = WEIGHT_FAMILIES[int(rng.integers(3))]
    ef = FamilyKind.DC if rng.random() < 0.3 else FamilyKind.BERNOULLI
    alpha = float(rng.choice([0.0, 0.5, 1.0]))
    net = random_network(rng, n, p_edge=rng.uniform(0.1, 0.8), p_missing=rng.uniform(0, 0.2),
                         directed=bool(rng.random() < 0.7), weight_family=wf)
    return net, _config(K, alpha, ef, wf)


def test_elbo_trace_monotone_over_random_fits():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for trial in range(100):
        net, cfg = _random_instance(rng)
        res = fit(net, cfg, seed=trial, stopping=Stopping(max_iters=200))
        steps = np.diff(res.elbo_trace)
        worst = min(worst, float(steps.min()) if steps.size else 0.0)
        assert np.all(steps >= -1e-8), (trial, cfg, steps.min())
    assert worst >= -1e-8


def test_one_sweep_increases_elbo():
    rng = np.random.default_rng(77)
    for trial in range(100):
        n = 20
        net = random_network(rng, n, p_edge=0.4)
        cfg = ModelConfig(K=3, alpha=float(rng.choice([0.0, 0.5, 1.0])))
        mu0 = init_beliefs(n, 3, trial)
        g0 = elbo(net, mu0, update_bundles(net, mu0, cfg), cfg)
        res = fit(net, cfg, init=mu0, stopping=Stopping(max_iters=1))
        assert res.elbo > g0 + 1e-8


# -- fitting -----------------------------------------------------------------------

def test_k1_posterior_mean_is_global_mean():
    rng = np.random.default_rng(3)
    net = random_network(rng, 15)
    res = fit(net, ModelConfig(K=1, alpha=0.5), seed=0)
    assert res.converged and res.iterations <= 2
    np.testing.assert_array_equal(res.beliefs, np.ones((15, 1)))
    m = posterior_mean(FamilyKind.NORMAL, res.posteriors.tau_w[0, 0])
    assert m == pytest.approx(net.w_weight.mean(), rel=1e-12)


def test_alpha_one_ignores_weights_bitwise():
    rng = np.random.default_rng(8)
    for trial in range(10):
        net = random_network(rng, 20, p_edge=0.3)
        other = net.with_weights(rng.normal(5, 10, net.n_weighted))
        cfg = ModelConfig(K=3, alpha=1.0)
        mu0 = init_beliefs(20, 3, trial)
        a = fit(net, cfg, init=mu0)
        b = fit(other, cfg, init=mu0)
        assert np.array_equal(a.beliefs, b.beliefs)
        assert a.elbo == b.elbo


def test_vertex_permutation_equivariance():
    rng = np.random.default_rng(12)
    for trial in range(10):
        net, cfg = _random_instance(rng)
        n = net.n
        mu0 = init_beliefs(n, cfg.K, trial)
        perm = rng.permutation(n)
        inv = np.argsort(perm)
        a = fit(net, cfg, init=mu0)
        b = fit(net.permute(perm), cfg, init=mu0[inv])
        assert np.array_equal(b.beliefs[perm], a.beliefs)
        assert b.elbo == pytest.approx(a.elbo, abs=1e-10)


def test_planted_two_blocks_recovered():
    spec = GeneratorSpec(K=2, p_edge=1.0, weight_mean=np.array([[1.0, -1.0], [-1.0, 1.0]]),
                         weight_var=0.1, group_sizes=(20, 20), seed=5)
    net, z = sample(spec)
    best, elbos = run_restarts(net, ModelConfig(K=2, alpha=0.5), 10, seed=1)
    assert nmi(z, best.labels) == 1.0
    assert best.elbo == max(elbos)


def test_run_restarts_single_equals_fit():
    rng = np.random.default_rng(6)
    net = random_network(rng, 15)
    cfg = ModelConfig(K=3)
    best, elbos = run_restarts(net, cfg, 1, seed=99, init_method="dirichlet")
    ref = fit(net, cfg, seed=substream_seeds(99, 1)[0])
    assert np.array_equal(best.beliefs, ref.beliefs) and elbos == [ref.elbo]


def test_run_restarts_independent_of_parallelism():
    rng = np.random.default_rng(10)
    net = random_network(rng, 18)
    cfg = ModelConfig(K=3)
    a, ea = run_restarts(net, cfg, 5, seed=4, parallelism=1)
    b, eb = run_restarts(net, cfg, 5, seed=4, parallelism=3)
    assert np.array_equal(a.beliefs, b.beliefs) and ea == eb
    assert a.elbo >= max(ea)


def test_run_restarts_validation():
    net = ObservedNetwork(3, [0], [1], [1.0])
    with pytest.raises(ValueError):
        run_restarts(net, ModelConfig(K=2), 0)
    with pytest.raises(ValueError, match="engine"):
        run_restarts(net, ModelConfig(K=2), 1, engine="mcmc")


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(K=0)
    with pytest.raises(ValueError):
        ModelConfig(K=2, alpha=1.5)
    with pytest.raises(ValueError):
        ModelConfig(K=2, mu0=[0.7, 0.7])


def test_fit_result_json_round_trip():
    rng = np.random.default_rng(1)
    net = random_network(rng, 8)
    res = fit(net, ModelConfig(K=2), seed=3)
    again = FitResult.from_dict(res.to_dict())
    np.testing.assert_array_equal(again.beliefs, res.beliefs)
    np.testing.assert_array_equal(again.posteriors.tau_w, res.posteriors.tau_w)
    assert again.elbo == res.elbo and again.config == res.config
