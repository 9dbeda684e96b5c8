import numpy as np
import pytest
from sklearn.metrics import normalized_mutual_info_score

from wsbm.expfam import FamilyKind
from wsbm.synthgen import (
    GeneratorSpec,
    archetype_matrix,
    fig2_toy,
    fig4_suite,
    nmi,
    sample,
    threshold_network,
)


def test_near_deterministic_limit():
    mean = np.array([[2.0, -1.0], [0.5, 3.0]])
    net, z = sample(GeneratorSpec(K=2, p_edge=1.0, weight_mean=mean, weight_var=1e-12,
                                  group_sizes=(5, 5), seed=0))
    assert net.n_weighted == 90 and net.n_nonedges == 0
    np.testing.assert_allclose(net.w_weight, mean[z[net.w_src], z[net.w_dst]], atol=1e-4)


def test_zero_probability_gives_no_edges():
    net, _ = sample(GeneratorSpec(K=3, p_edge=0.0, weight_mean=1.0, group_sizes=(4, 4, 4), seed=1))
    assert net.n_weighted == 0 and net.n_nonedges == 12 * 11


def test_edge_frequency_and_weight_moments():
    # 4 bundles of 50 x 50 = 2500 ordered pairs (2450 on the diagonal blocks)
    mean = np.array([[1.0, -2.0], [0.0, 4.0]])
    var = np.array([[0.5, 1.0], [2.0, 0.25]])
    net, z = sample(GeneratorSpec(K=2, p_edge=0.3, weight_mean=mean, weight_var=var,
                                  group_sizes=(50, 50), seed=11))
    pairs = 100 * 99
    freq = net.n_weighted / pairs
    assert abs(freq - 0.3) <= 3 * np.sqrt(0.3 * 0.7 / pairs)
    for a in range(2):
        for b in range(2):
            sel = (z[net.w_src] == a) & (z[net.w_dst] == b)
            w = net.w_weight[sel]
            m = w.size
            assert m >= 400 * 0.3 * 0.9
            assert abs(w.mean() - mean[a, b]) <= 3 * np.sqrt(var[a, b] / m)
            # variance of the sample variance of a Normal: 2 s^4 / (m - 1)
            assert abs(w.var(ddof=1) - var[a, b]) <= 3 * np.sqrt(2 * var[a, b] ** 2 / (m - 1))


@pytest.mark.parametrize("family", [FamilyKind.POISSON, FamilyKind.EXPONENTIAL])
def test_count_and_positive_weight_families(family):
    net, _ = sample(GeneratorSpec(K=1, p_edge=1.0, weight_family=family, weight_mean=3.0,
                                  group_sizes=(40,), seed=2))
    w = net.w_weight
    assert np.all(w >= 0)
    sd = np.sqrt(3.0) if family is FamilyKind.POISSON else 3.0
    assert abs(w.mean() - 3.0) <= 3 * sd / np.sqrt(w.size)
    if family is FamilyKind.POISSON:
        assert np.all(w == np.round(w))


def test_degree_corrected_generation():
    phi = np.r_[np.full(20, 0.5), np.full(20, 2.0)]
    net, _ = sample(GeneratorSpec(K=1, p_edge=0.2, weight_family=None, group_sizes=(40,),
                                  propensity=phi, seed=4))
    deg = net.degrees().dW_out
    assert deg[20:].mean() > 2 * deg[:20].mean()


def test_missing_fraction_and_undirected():
    net, _ = sample(GeneratorSpec(K=2, p_edge=0.5, weight_mean=0.0, group_sizes=(10, 10),
                                  missing_fraction=0.1, undirected=True, seed=5))
    assert not net.directed
    assert net.n_missing == round(0.1 * 190)
    assert np.all(net.w_src < net.w_dst)


def test_generator_determinism():
    spec = GeneratorSpec(K=2, p_edge=0.4, weight_mean=1.0, group_sizes=(8, 8), missing_fraction=0.2, seed=9)
    a, _ = sample(spec)
    b, _ = sample(spec)
    for name in ("w_src", "w_dst", "w_weight", "m_src", "m_dst"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_spec_validation():
    with pytest.raises(ValueError):
        GeneratorSpec(K=2, p_edge=1.5, weight_mean=0.0, group_sizes=(2, 2))
    with pytest.raises(ValueError):
        GeneratorSpec(K=2, p_edge=0.5, weight_mean=0.0, weight_var=0.0, group_sizes=(2, 2))
    with pytest.raises(ValueError):
        GeneratorSpec(K=2, p_edge=0.5, weight_mean=0.0, labels=[0, 2])
    with pytest.raises(ValueError):
        GeneratorSpec(K=2, p_edge=0.5, weight_mean=0.0)


def test_fig2_levels():
    net, z = fig2_toy(noise_sd=0.0, seed=0)
    assert net.n == 32 and net.n_weighted == 32 * 31
    assert set(np.unique(net.w_weight)) == {1.0, 2.0, 3.0, 4.0}
    A, _ = net.adjacency()
    g2, g3, g4 = np.flatnonzero(z == 1), np.flatnonzero(z == 2), np.flatnonzero(z == 3)
    assert A[g2[0], g3[0]] == 2.0 and A[g3[0], g2[0]] == 2.0
    inner = A[np.ix_(g4, g4)][~np.eye(g4.size, dtype=bool)]
    assert np.all(inner == 4.0)


def test_fig2_thresholds_never_separate_four_groups():
    net, z = fig2_toy(noise_sd=0.0, seed=0)
    levels = np.unique(net.w_weight)
    for t in np.r_[levels, (levels[:-1] + levels[1:]) / 2, levels[0] - 1, levels[-1] + 1]:
        A, _ = threshold_network(net, t).adjacency()
        # vertices with the same out/in profile (own pair aside) are indistinguishable to any block model
        classes = {tuple(np.delete(np.r_[A[i], A[:, i]], [i, net.n + i]) > 0) for i in range(net.n)}
        assert len(classes) <= 3


def test_fig4_moments():
    net, z = fig4_suite(0.15, seed=3)
    assert net.n == 80 and net.n_weighted == 80 * 79
    same = z[net.w_src] == z[net.w_dst]
    for sel, mu in ((same, -1.0), (~same, 1.0)):
        w = net.w_weight[sel]
        assert abs(w.mean() - mu) <= 3 * np.sqrt(0.15 / w.size)
        assert abs(w.var(ddof=1) - 0.15) <= 3 * np.sqrt(2 * 0.15 ** 2 / (w.size - 1))
    net, z = fig4_suite(1e-12, seed=0)
    assert np.all(np.sign(net.w_weight) == np.where(z[net.w_src] == z[net.w_dst], -1, 1))


def test_archetypes():
    assert archetype_matrix("assortative", 3)[0, 0] == 0.8
    assert archetype_matrix("disassortative", 3)[1, 1] == 0.1
    cp = archetype_matrix("core-periphery", 3)
    assert cp[0, 2] == cp[2, 0] == 0.8 and cp[1, 2] == 0.1
    od = archetype_matrix("ordered", 3)
    assert od[0, 1] == od[1, 2] == 0.8 and od[1, 0] == 0.1
    with pytest.raises(ValueError):
        archetype_matrix("hierarchical", 3)


def test_nmi_examples():
    assert nmi([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
    assert nmi([0, 0, 1, 1], [5, 5, 5, 5]) == 0.0
    assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == 0.0
    assert nmi([3, 3, 3], [1, 1, 1]) == 1.0
    with pytest.raises(ValueError, match="length"):
        nmi([0, 1], [0, 1, 1])


def test_nmi_identities_against_sklearn():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 60))
        a = rng.integers(0, int(rng.integers(1, 6)), n)
        b = rng.integers(0, int(rng.integers(1, 6)), n)
        v = nmi(a, b)
        assert v == nmi(b, a)
        perm = rng.permutation(10)
        assert nmi(a, perm[b]) == v
        assert nmi(a, a) == 1.0
        if len(set(a)) > 1 and len(set(b)) > 1:
            assert v == pytest.approx(normalized_mutual_info_score(a, b, average_method="arithmetic"), abs=1e-12)
