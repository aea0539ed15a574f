import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ari_bruteforce, chi2_ppf_oracle
from raedda.covariance import decompose
from raedda.criteria import penalty_spec
from raedda.errors import ConfigError, ShapeError
from raedda.simulation import (
    CONTAMINATION,
    SCENARIOS,
    GroundTruth,
    MethodSpec,
    ScenarioSpec,
    adjusted_rand_index,
    generate_scenario,
    run_monte_carlo,
    scenario_parameters,
    score_fit,
)
from raedda.transductive import FitResult, MixtureParameters, TrimmingIndicators


# ---------------------------------------------------------------------------
# scenario generation


def test_clean_equal_sizes():
    lab, unl, truth = generate_scenario(ScenarioSpec("EII", "equal", "none", 1))
    assert (lab.N, unl.M, lab.p) == (570, 1080, 6)
    assert truth.flipped.size == 0 and truth.train_outliers.size == 0 and truth.test_outliers.size == 0
    assert np.array_equal(np.bincount(truth.test_labels), [360, 360, 360])
    assert lab.G == 2


def test_medium_contamination_counts():
    lab, unl, truth = generate_scenario(ScenarioSpec("EEI", "equal", "medium", 2))
    assert truth.flipped.size == 20
    assert truth.train_outliers.size == 20 and truth.test_outliers.size == 80
    assert (lab.N, unl.M) == (590, 1160)
    flipped_given = lab.labels[truth.flipped]
    assert np.all(flipped_given != truth.train_labels[truth.flipped])
    assert np.all(truth.train_labels[truth.flipped] >= 0)


def test_outliers_beyond_chi2_threshold():
    threshold = chi2_ppf_oracle(0.975, 6)
    assert threshold == pytest.approx(14.449, abs=1e-3)
    mu, sigma = scenario_parameters("VVV")
    lab, unl, truth = generate_scenario(ScenarioSpec("VVV", "unequal", "high", 3))
    pts = np.vstack([lab.X[truth.train_outliers], unl.Y[truth.test_outliers]])
    for g in range(3):
        d = pts - mu[g]
        d2 = np.einsum("ni,ij,nj->n", d, np.linalg.inv(sigma[g]), d)
        assert np.all(d2 > threshold)


def test_scenario_parameters_match_table():
    mu, sigma = scenario_parameters("EVV")
    np.testing.assert_array_equal(mu[0], [0, 8, 0, 0, 0, 0])
    np.testing.assert_array_equal(mu[1], [8, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(mu[2], [-8, -8, 0, 0, 0, 0])
    np.testing.assert_array_equal(sigma[0], np.diag([1, 5, 1, 1, 1, 1]))
    np.testing.assert_array_equal(sigma[1], np.diag([5, 1, 1, 1, 1, 1]))
    np.testing.assert_array_equal(sigma[2][:2, :2], [[3, -2], [-2, 3]])
    assert set(SCENARIOS) == {"EII", "EEI", "EVV", "VVV", "VVV-overlap"}


@settings(max_examples=10)
@given(
    st.sampled_from(list(SCENARIOS)),
    st.sampled_from(["equal", "unequal"]),
    st.sampled_from(list(CONTAMINATION)),
    st.integers(0, 2**31),
)
def test_generated_counts_property(scen, prop, cont, seed):
    spec = ScenarioSpec(scen, prop, cont, seed)
    lab, unl, truth = generate_scenario(spec)
    q_l, q_u = CONTAMINATION[cont]
    assert lab.N == spec.N and unl.M == spec.M
    assert truth.flipped.size == q_l and truth.test_outliers.size == q_u
    assert np.sum(truth.test_labels == 2) == spec.sizes[1][2]
    assert np.all(lab.labels < 2)


def test_generation_reproducible():
    a = generate_scenario(ScenarioSpec("EVV", "unequal", "low", 9))
    b = generate_scenario(ScenarioSpec("EVV", "unequal", "low", 9))
    np.testing.assert_array_equal(a[0].X, b[0].X)
    np.testing.assert_array_equal(a[1].Y, b[1].Y)
    np.testing.assert_array_equal(a[2].flipped, b[2].flipped)


def test_group_means_converge():
    mu, sigma = scenario_parameters("VVV")
    pooled = {g: [] for g in range(3)}
    for seed in range(16):
        lab, unl, truth = generate_scenario(ScenarioSpec("VVV", "equal", "none", seed))
        for g in range(2):
            pooled[g].append(lab.X[truth.train_labels == g])
        for g in range(3):
            pooled[g].append(unl.Y[truth.test_labels == g])
    for g in range(3):
        X = np.vstack(pooled[g])
        assert X.shape[0] >= 5760
        band = 3 * np.sqrt(np.diag(sigma[g]) / X.shape[0])
        assert np.all(np.abs(X.mean(axis=0) - mu[g]) < band)


def test_bad_scenario_tokens():
    with pytest.raises(ConfigError):
        ScenarioSpec("XYZ")
    with pytest.raises(ConfigError):
        ScenarioSpec("EII", "equal", "extreme")
    assert ScenarioSpec("EII", contamination="strong").contamination == "high"


# ---------------------------------------------------------------------------
# adjusted Rand index


def test_ari_examples():
    assert adjusted_rand_index([1, 1, 2, 2], [1, 1, 2, 2]) == 1.0
    assert adjusted_rand_index([1, 1, 2, 2], [2, 2, 1, 1]) == 1.0
    val = adjusted_rand_index([1, 1, 2, 2], [1, 2, 1, 2])
    assert val == pytest.approx(ari_bruteforce([1, 1, 2, 2], [1, 2, 1, 2]), abs=1e-15)
    assert val == pytest.approx(-0.5)


def test_ari_length_mismatch():
    with pytest.raises(ShapeError):
        adjusted_rand_index([1, 2], [1, 2, 3])


@given(st.lists(st.integers(0, 3), min_size=2, max_size=25), st.integers(0, 2**32 - 1))
def test_ari_properties(a, seed):
    rng = np.random.default_rng(seed)
    a = np.array(a)
    b = rng.integers(0, 3, size=a.size)
    assert adjusted_rand_index(a, a) == 1.0
    assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_index(b, a), abs=1e-12)
    perm = rng.permutation(4)
    assert adjusted_rand_index(perm[a], b) == pytest.approx(adjusted_rand_index(a, b), abs=1e-12)
    assert adjusted_rand_index(a, b) == pytest.approx(ari_bruteforce(a.tolist(), b.tolist()), abs=1e-12)
    assert adjusted_rand_index(a, b) <= 1.0


# ---------------------------------------------------------------------------
# scoring


def fake_fit(test_labels, zeta, E, G=2):
    """A FitResult whose MAP test labels are ``test_labels`` (-1 = trimmed)."""
    test_labels = np.asarray(test_labels)
    M = test_labels.size
    post = np.zeros((M, E))
    post[np.arange(M), np.where(test_labels < 0, 0, test_labels)] = 1.0
    sig = tuple(decompose(np.eye(1)) for _ in range(E))
    params = MixtureParameters(np.full(E, 1 / E), np.zeros((E, 1)), sig, G, "EII")
    return FitResult(
        approach="transductive",
        params=params,
        trimming=TrimmingIndicators(np.asarray(zeta, bool), test_labels >= 0),
        posteriors=post,
        loglik_trace=(0.0,),
        penalty=penalty_spec("EII", E, G, 1, 1.0, 1),
        converged=True,
        diagnostics=(),
        model="EII",
        c=1.0,
        c_tilde=1.0,
        alpha_l=0.0,
        alpha_u=0.0,
        seed=0,
        n_test=M,
    )


def toy_truth():
    # training rows 0..3 (row 1 flipped), test rows: two of class 0, one of 1, two hidden, one outlier
    return GroundTruth(
        test_labels=np.array([0, 0, 1, 2, 2, -1]),
        train_labels=np.array([0, 0, 1, 1]),
        flipped=np.array([1]),
        train_outliers=np.zeros(0, int),
        test_outliers=np.array([5]),
    )


def test_score_perfect_fit():
    fit = fake_fit([0, 0, 1, 2, 2, -1], [True, False, True, True], 3)
    rep = score_fit(fit, toy_truth())
    assert (rep.pct_label_noise, rep.pct_hidden_group, rep.ari, rep.pct_novelty) == (1.0, 1.0, 1.0, 1.0)


def test_score_no_trimming():
    fit = fake_fit([0, 0, 1, 2, 2, 2], [True] * 4, 3)
    assert score_fit(fit, toy_truth()).pct_label_noise == 0.0


def test_score_hand_counted():
    # one hidden row sent to class 1, the outlier kept as hidden, a class-0 row trimmed
    fit = fake_fit([0, -1, 1, 2, 1, 2], [True] * 4, 3)
    rep = score_fit(fit, toy_truth())
    assert rep.pct_hidden_group == pytest.approx(1 / 2)
    assert rep.pct_novelty == pytest.approx(2 / 3)
    assert rep.ari == pytest.approx(ari_bruteforce([0, -1, 1, 2, 1, 2], [0, 0, 1, 2, 2, -1]))


def test_score_no_hidden_class_declared():
    fit = fake_fit([0, 0, 1, 1, 1, 0], [True] * 4, 2)
    rep = score_fit(fit, toy_truth())
    assert rep.pct_hidden_group == 0.0
    assert rep.pct_novelty == 0.0


# ---------------------------------------------------------------------------
# Monte-Carlo driver


def test_monte_carlo_single_replicate():
    cell = (ScenarioSpec("EII", "equal", "none"), MethodSpec(models=("EII",), n_init=2, n_init_hidden=2))
    res = run_monte_carlo([cell], B=1, seed=3)
    assert len(res.cells) == 1 and len(res.records) == 1
    s = res.cells[0]
    assert s.n_ok == 1 and s.n_failed == 0
    assert s.quartiles["ari"][0] == s.quartiles["ari"][2] > 0.9


def test_monte_carlo_deterministic_and_parallel_safe():
    cells = [
        (ScenarioSpec("EII", "equal", "low"), MethodSpec(models=("EII",), n_init=2, n_init_hidden=2)),
        (ScenarioSpec("EII", "equal", "low"), MethodSpec(models=("EII",), trim_multiplier=0.5, n_init=2, n_init_hidden=2)),
    ]
    a = run_monte_carlo(cells, B=2, seed=5)
    b = run_monte_carlo(cells, B=2, seed=5, jobs=2)
    assert a.records == b.records
    assert [c.quartiles for c in a.cells] == [c.quartiles for c in b.cells]


def test_method_trimming_levels():
    scen = ScenarioSpec("EII", "equal", "medium")
    m = MethodSpec(trim_multiplier=0.5)
    a_l, a_u = m.trimming(scen)
    assert a_l == pytest.approx(0.5 * 2 * 20 / 590)
    assert a_u == pytest.approx(0.5 * 80 / 1160)


def test_monte_carlo_rejects_zero_replicates():
    with pytest.raises(ConfigError):
        run_monte_carlo([], B=0)
