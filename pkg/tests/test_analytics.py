import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from vidcurate import analytics as A
from vidcurate.metrics import SubMetricVector


# correlations

def test_pearson_examples():
    x = [1.0, 2, 3, 4]
    assert A.pearson(x, x) == 1.0
    assert A.pearson(x, [-v for v in x]) == -1.0
    assert A.pearson(x, [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)


def test_spearman_examples():
    x = np.arange(1.0, 9)
    assert A.spearman(x, np.exp(x)) == 1.0
    assert A.spearman(x, x[::-1]) == -1.0
    assert A.spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)


def test_kendall_examples():
    assert A.kendall([1, 2, 3, 4], [2, 3, 5, 9]) == 1.0
    assert A.kendall([1, 2, 3], [1, 3, 2]) == pytest.approx(1 / 3, abs=1e-15)
    assert A.kendall([1, 2, 3], [3, 2, 1]) == -1.0


@pytest.mark.parametrize("f", [A.pearson, A.spearman, A.kendall])
def test_degenerate_inputs(f):
    with pytest.raises(A.DegenerateError):
        f([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        f([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        f([1], [1])


vectors = st.integers(2, 300).flatmap(lambda n: st.tuples(
    st.integers(0, 2**32 - 1), st.just(n), st.booleans()))


def draw(seed, n, ties):
    rng = np.random.default_rng(seed)
    if ties:
        x, y = rng.integers(0, 5, n).astype(float), rng.integers(0, 5, n).astype(float)
    else:
        x = rng.normal(size=n)
        y = 0.5 * x + rng.normal(size=n)
    return x, y


@settings(max_examples=80, deadline=None)
@given(case=vectors)
def test_correlations_match_naive(case):
    x, y = draw(*case)
    if np.all(x == x[0]) or np.all(y == y[0]):
        return
    assert A.pearson(x, y) == pytest.approx(oracles.pearson(x, y), abs=1e-12)
    assert A.spearman(x, y) == pytest.approx(oracles.spearman(list(x), list(y)), abs=1e-12)
    assert A.kendall(x, y) == pytest.approx(oracles.kendall_tau_b(list(x), list(y)), abs=1e-12)


def vecs(rows, names):
    out = []
    for i, row in enumerate(rows):
        v = SubMetricVector(f"c{i}")
        for name, val in zip(names, row):
            if val is not None:
                v.set(name, val, "external")
        out.append(v)
    return out


def test_correlate_metrics_duplicated_column(rng):
    x = rng.random(50)
    reports = A.correlate_metrics(vecs(zip(x, x), ["clarity", "aesthetic"]),
                                  [("clarity", "aesthetic")])
    assert reports[0].pearson == pytest.approx(1.0, abs=1e-12)
    assert reports[0].n == 50 and reports[0].skipped == 0


def test_correlate_metrics_skips_incomplete():
    rows = [(1, 2), (2, 1), (3, None), (4, 5)]
    r = A.correlate_metrics(vecs(rows, ["a", "b"]), [("a", "b")])[0]
    assert (r.n, r.skipped) == (3, 1)
    assert r.pearson == pytest.approx(oracles.pearson([1, 2, 4], [2, 1, 5]), abs=1e-12)


def test_correlate_metrics_no_rows():
    with pytest.raises(ValueError):
        A.correlate_metrics(vecs([(1, None), (None, 2)], ["a", "b"]), [("a", "b")])


def test_report_names_distinct():
    with pytest.raises(ValueError):
        A.CorrelationReport(("a", "a"), 0.1, 0.1)


def test_bivariate_normal_sampling():
    rng = np.random.default_rng(11)
    n = 100_000
    z = rng.multivariate_normal([0, 0], [[1, 0.4], [0.4, 1]], size=n)
    assert A.pearson(z[:, 0], z[:, 1]) == pytest.approx(0.4, abs=0.02)
    ind = rng.normal(size=(n, 2))
    assert abs(A.pearson(ind[:, 0], ind[:, 1])) < 0.02


# cascade

def test_cascade_no_deviation():
    v = vecs([(0.5, 0.5), (0.2, 0.9)], ["c", "a"])
    assert A.cascade_error(v, {"c": 0.3, "a": 0.3}, [], 0.1) == 0


def test_cascade_boundary_clip_flips():
    # kept at the ideal threshold (inclusive), dropped once it moves up
    v = vecs([(0.5, 0.9), (0.9, 0.9), (0.1, 0.9)], ["c", "a"])
    assert A.cascade_error(v, {"c": 0.5, "a": 0.3}, ["c"], 0.1) == 1


def test_cascade_unknown_metric():
    with pytest.raises(KeyError):
        A.cascade_error(vecs([(1, 1)], ["c", "a"]), {"c": 0.5}, ["m"], 0.1)


def brute_force_flips(rows, ideal, deviated, dev):
    moved = {m: t * (1 + dev) if m in deviated else t for m, t in ideal.items()}
    keep = lambda r, th: all(r[m] >= t for m, t in th.items())  # noqa: E731
    return sum(keep(r, ideal) != keep(r, moved) for r in rows)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), dev=st.floats(0.001, 0.5))
def test_cascade_matches_brute_force_and_is_monotone(seed, dev):
    rng = np.random.default_rng(seed)
    data = rng.random((200, 3))
    names = ["c", "m", "a"]
    v = vecs(data.tolist(), names)
    ideal = dict(zip(names, rng.uniform(0.1, 0.6, 3)))
    rows = [dict(zip(names, r)) for r in data]
    prev = 0
    for s in (["c"], ["c", "a"], ["c", "m", "a"]):
        got = A.cascade_error(v, ideal, s, dev)
        assert got == brute_force_flips(rows, ideal, s, dev)
        assert got >= prev
        prev = got


# mixture

def mixture(rng, n, w1, m1, s1, m2, s2):
    k = rng.random(n) < w1
    return np.where(k, rng.normal(m1, s1, n), rng.normal(m2, s2, n))


def test_gmm_well_separated():
    x = mixture(np.random.default_rng(0), 2000, 0.5, 0, 0.1, 10, 0.1)
    g = A.fit_gmm2(x)
    assert g.means[0] == pytest.approx(0, abs=0.02) and g.means[1] == pytest.approx(10, abs=0.02)
    assert g.weights[0] == pytest.approx(0.5, abs=0.02)
    assert g.converged


def test_gmm_constant_is_degenerate():
    with pytest.raises(A.DegenerateError):
        A.fit_gmm2(np.full(200, 2.5))


def test_gmm_needs_100_scores():
    with pytest.raises(A.DegenerateError):
        A.fit_gmm2(np.arange(99.0))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), w1=st.floats(0.2, 0.8), gap=st.floats(0.5, 4))
def test_gmm_loglik_non_decreasing(seed, w1, gap):
    x = mixture(np.random.default_rng(seed), 500, w1, 0, 0.5, gap, 0.8)
    g = A.fit_gmm2(x)
    h = np.array(g.history)
    assert np.all(np.diff(h) >= -1e-12)
    assert g.log_likelihood == pytest.approx(h[-1] * len(x))
    assert abs(sum(g.weights) - 1) <= 1e-9 and g.means[0] <= g.means[1] and min(g.stds) > 0


def crossing_scan(g, step=1e-6):
    (w1, w2), (m1, m2), (s1, s2) = g.weights, g.means, g.stds
    x = np.arange(m1, m2, step)
    d = (math.log(w1) - np.log(s1) - 0.5 * ((x - m1) / s1) ** 2) - \
        (math.log(w2) - np.log(s2) - 0.5 * ((x - m2) / s2) ** 2)
    i = np.flatnonzero(np.diff(np.sign(d)) != 0)
    return x[i[0]] if len(i) else None


def test_threshold_symmetric_case():
    g = A.GaussianMixture1D((0.5, 0.5), (2.0, 3.0), (0.3, 0.3), 0.0)
    assert A.decomposition_threshold(g) == 2.5


def test_threshold_matches_scan_unequal_stds():
    g = A.GaussianMixture1D((0.45, 0.55), (2.0, 3.5), (0.3, 0.4), 0.0)
    assert A.decomposition_threshold(g) == pytest.approx(crossing_scan(g), abs=1e-4)


def test_threshold_unequal_weights_moves_toward_light_component():
    g = A.GaussianMixture1D((0.9, 0.1), (2.0, 3.0), (0.3, 0.3), 0.0)
    t = A.decomposition_threshold(g)
    closed = 2.5 + 0.09 * math.log(9) / 1.0
    assert t == pytest.approx(closed, abs=1e-12)
    assert t > 2.5
    assert t == pytest.approx(crossing_scan(g), abs=1e-5)


def test_threshold_midpoint_without_interior_root():
    # a wide heavy component dominates everywhere between the means
    g = A.GaussianMixture1D((0.99, 0.01), (0.0, 0.1), (5.0, 4.0), 0.0)
    assert crossing_scan(g) is None
    assert A.decomposition_threshold(g) == pytest.approx(0.05)


@settings(max_examples=100, deadline=None)
@given(w1=st.floats(0.05, 0.95), m1=st.floats(-5, 5), gap=st.floats(0.2, 5),
       s1=st.floats(0.05, 2), s2=st.floats(0.05, 2))
def test_threshold_is_interior_crossing(w1, m1, gap, s1, s2):
    g = A.GaussianMixture1D((w1, 1 - w1), (m1, m1 + gap), (s1, s2), 0.0)
    t = A.decomposition_threshold(g)
    assert g.means[0] <= t <= g.means[1]
    scan = crossing_scan(g, step=gap / 20000)
    if scan is not None:
        assert g.means[0] < t < g.means[1]
        lp = lambda k, x: math.log(g.weights[k]) - math.log(g.stds[k]) \
            - 0.5 * ((x - g.means[k]) / g.stds[k]) ** 2  # noqa: E731
        assert abs(lp(0, t) - lp(1, t)) <= 1e-6 * max(1, abs(lp(0, t)))


def test_mixture_type_invariants():
    with pytest.raises(ValueError):
        A.GaussianMixture1D((0.5, 0.6), (0, 1), (1, 1), 0)
    with pytest.raises(ValueError):
        A.GaussianMixture1D((0.5, 0.5), (1, 0), (1, 1), 0)
    with pytest.raises(ValueError):
        A.GaussianMixture1D((0.5, 0.5), (0, 1), (0, 1), 0)


# filtering

def test_filter_inclusive_boundary():
    d = A.filter_by_vtss({"a": 2.4, "b": 2.5, "c": 2.6}, 2.5)
    assert [x.clip_id for x in d if x.kept] == ["b", "c"]
    assert all(x.kept == (x.vtss >= x.threshold) for x in d)


def test_filter_all_above():
    assert all(x.kept for x in A.filter_by_vtss({"a": 3, "b": 4}, 1))


def test_filter_kept_fraction_matches_upper_mass():
    rng = np.random.default_rng(5)
    x = mixture(rng, 20_000, 0.45, 2.0, 0.3, 3.5, 0.4)
    g = A.fit_gmm2(x)
    t = A.decomposition_threshold(g)
    kept = np.mean([d.kept for d in A.filter_by_vtss(dict(enumerate(x)), t)])
    assert kept == pytest.approx(g.weights[1], abs=0.03)


def test_write_decisions(tmp_path):
    A.write_decisions(tmp_path / "d.csv", A.filter_by_vtss({"a": 2.4, "b": 2.5}, 2.5))
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines == ["clip_id,vtss,kept,threshold", "a,2.4,0,2.5", "b,2.5,1,2.5"]


def test_gmm_recovers_reference_mixture():
    x = mixture(np.random.default_rng(2), 50_000, 0.45, 2.0, 0.3, 3.5, 0.4)
    g = A.fit_gmm2(x)
    assert g.means[0] == pytest.approx(2.0, abs=0.05)
    assert g.means[1] == pytest.approx(3.5, abs=0.05)
    assert g.weights[0] == pytest.approx(0.45, abs=0.03)
    assert g.weights[1] == pytest.approx(0.55, abs=0.03)
    assert A.decomposition_threshold(g) == pytest.approx(crossing_scan(g), abs=1e-4)
