import numpy as np
import pytest

from wsbm.expfam import FamilyKind
from wsbm.model_select import Candidate, check_comparable, parse_k_range, select, sweep_k
from wsbm.synthgen import fig4_suite
from wsbm.vb_engine import ModelConfig

from conftest import random_network


def _candidates(elbos, ks=None):
    ks = ks or list(range(1, len(elbos) + 1))
    return [Candidate(ModelConfig(K=k), None, g, 1, [g]) for k, g in zip(ks, elbos)]


def test_bayes_factor_algebra():
    rng = np.random.default_rng(0)
    for _ in range(50):
        G = rng.normal(0, 1e3, 6)
        rep = select(_candidates(list(G)))
        B = rep.log_bayes_factors
        assert np.array_equal(B, -B.T)
        assert np.all(np.diag(B) == 0)
        for a in range(6):
            for b in range(6):
                assert B[a, b] == G[a] - G[b]
                for c in range(6):
                    # G differences are rounded once each; the identity holds to rounding
                    assert B[a, c] == pytest.approx(B[a, b] + B[b, c], rel=0, abs=1e-12 * np.abs(G).max())
        assert rep.chosen == int(np.argmax(G))


def test_ties_go_to_smaller_k():
    rep = select(_candidates([1.0, 3.0, 3.0], ks=[5, 4, 2]))
    assert rep.chosen_config.K == 2


def test_single_candidate():
    rep = select(_candidates([-7.5]))
    assert rep.chosen == 0
    assert rep.log_bayes_factors.shape == (1, 1) and rep.log_bayes_factors[0, 0] == 0


def test_incomparable_candidates_rejected():
    with pytest.raises(ValueError, match="alpha"):
        check_comparable([ModelConfig(K=2, alpha=0.5), ModelConfig(K=3, alpha=0.0)])
    with pytest.raises(ValueError, match="families"):
        check_comparable([ModelConfig(K=2), ModelConfig(K=3, weight_family=FamilyKind.POISSON)])
    with pytest.raises(ValueError, match="families"):
        check_comparable([ModelConfig(K=2), ModelConfig(K=3, existence_family=FamilyKind.DC)])


def test_parse_k_range():
    assert parse_k_range("1..4") == [1, 2, 3, 4]
    assert parse_k_range("2,4,8") == [2, 4, 8]
    assert parse_k_range(" 3 ") == [3]
    for bad in ("4..1", "a", "1..x"):
        with pytest.raises(ValueError, match="K range"):
            parse_k_range(bad)


def test_sweep_validation():
    net = random_network(np.random.default_rng(0), 6)
    with pytest.raises(ValueError):
        sweep_k(net, ModelConfig(K=2), [])
    with pytest.raises(ValueError):
        sweep_k(net, ModelConfig(K=2), [2, 2])
    with pytest.raises(ValueError, match="mu0"):
        sweep_k(net, ModelConfig(K=2, mu0=[0.5, 0.5]), [2, 3])


def test_sweep_finds_planted_k_and_is_deterministic():
    net, z = fig4_suite(0.05, seed=1, n_groups=4, group_size=8)
    rep = sweep_k(net, ModelConfig(K=1, alpha=0.0), range(1, 7), restarts=4, seed=3, truth=z)
    assert rep.chosen_config.K == 4
    assert rep.candidates[rep.chosen].nmi == 1.0
    again = sweep_k(net, ModelConfig(K=1, alpha=0.0), range(1, 7), restarts=4, seed=3, truth=z)
    assert again.to_json() == rep.to_json() and again.to_csv() == rep.to_csv()
    rows = rep.to_csv().splitlines()
    assert rows[0] == "K,elbo,log_bf_vs_chosen,nmi,restarts,chosen"
    assert len(rows) == 7 and sum(r.endswith(",1") for r in rows[1:]) == 1
