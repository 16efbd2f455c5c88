import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from gris.core import ContractError, DegeneratePopulationError, TargetModel, derive_run_stream
from gris.proposal import DriftConfig
from gris.sampler import BridgeSpec, GrisConfig, bridge_combine, bridge_grad, bridge_logdensity, \
    evidence, gris_run, initial_population, rho_schedule, tempered_gris_run
from gris.targets import gaussian


def run(target, seed=0, run_index=0, p=10, delta=0.0, C0=None, **kw):
    rng = derive_run_stream(seed, run_index)
    cfg = GrisConfig(population=p, drift=DriftConfig(delta=delta), C0=C0, **kw)
    start = np.zeros(target.dim)
    init = initial_population(start, C0 if C0 is not None else 0.01 * np.eye(target.dim), p, rng)
    return gris_run(target, cfg, init, rng)


def test_standard_normal_mean_at_3000_evals():
    t = gaussian(np.zeros(2), np.eye(2))
    tr = run(t, eval_budget=3000)
    assert tr.evals <= 3000
    assert np.all(np.abs(tr.samples.mean(axis=0)) < 0.15)


def test_single_iteration_keeps_p_samples(gauss2):
    tr = run(gauss2, sample_size=10)
    assert tr.iterations == 1
    assert tr.samples.shape == (10, 2)
    assert tr.raw_log_weights.shape == (10,)


def test_trace_deterministic(gauss2):
    a = run(gauss2.clone(), seed=3, delta=0.5, eval_budget=500)
    b = run(gauss2.clone(), seed=3, delta=0.5, eval_budget=500)
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.raw_log_weights, b.raw_log_weights)
    assert [c.eval_count for c in a.checkpoints] == [c.eval_count for c in b.checkpoints]


@pytest.mark.parametrize("p, budget", [(10, 95), (7, 100), (2, 4)])
def test_budget_truncates_at_whole_iterations(p, budget, gauss2):
    tr = run(gauss2, p=p, eval_budget=budget)
    assert tr.evals == gauss2.counter.count
    assert tr.evals == p * (budget // p)
    assert tr.evals == p * (tr.iterations + 1)
    assert tr.truncated == (budget % p != 0)
    assert len(tr.raw_log_weights) == tr.iterations * p
    assert len(tr.samples) == tr.iterations * p


def test_checkpoints_follow_stride(gauss2):
    tr = run(gauss2, eval_budget=1000, checkpoint_stride=100)
    counts = [c.eval_count for c in tr.checkpoints]
    assert counts == list(range(100, 1001, 100))


def test_budget_must_cover_seed(gauss2):
    with pytest.raises(ContractError):
        run(gauss2, p=10, eval_budget=5)


def test_config_contracts():
    with pytest.raises(ContractError):
        GrisConfig(population=1, sample_size=10)
    with pytest.raises(ContractError):
        GrisConfig(population=5)
    with pytest.raises(ContractError):
        GrisConfig(population=5, sample_size=10, eval_budget=10)


def test_init_contracts(gauss2, rng):
    cfg = GrisConfig(population=4, sample_size=8)
    with pytest.raises(ContractError):
        gris_run(gauss2, cfg, np.zeros((3, 2)), rng)
    bounded = TargetModel(1, lambda x: 0.0 if abs(x[0]) < 1 else -np.inf,
                          lambda x: (0.0 if abs(x[0]) < 1 else -np.inf, np.zeros(1)))
    with pytest.raises(ContractError):
        gris_run(bounded, GrisConfig(population=2, sample_size=4), np.array([[0.0], [5.0]]), rng)


def test_degenerate_population(rng):
    init = np.array([[0.0], [1.0]])

    def logf(x):
        return 0.0 if x[0] in (0.0, 1.0) else -np.inf

    t = TargetModel(1, logf, lambda x: (logf(x), np.zeros(1)))
    with pytest.raises(DegeneratePopulationError):
        gris_run(t, GrisConfig(population=2, sample_size=10), init, rng)


@pytest.mark.parametrize("lw, expected", [
    (np.zeros(5), 0.0),
    (np.full(4, np.log(2.0)), np.log(2.0)),
    (np.log([2.0, 4.0]), np.log(3.0)),
])
def test_evidence_examples(lw, expected):
    assert evidence(lw) == pytest.approx(expected, abs=1e-14)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=40), st.randoms())
def test_evidence_permutation_invariant(lw, random):
    shuffled = list(lw)
    random.shuffle(shuffled)
    assert evidence(shuffled) == pytest.approx(evidence(lw), abs=1e-12)


def test_evidence_of_scaled_gaussian():
    # f = 2 N(0, 1) against q = N(0, 1): every weight is 2
    f = gaussian([0.0], [[1.0]], log_scale=np.log(2.0))
    x = np.random.default_rng(0).normal(size=50)
    lw = [f.log_density([v]) - stats.norm.logpdf(v) for v in x]
    assert evidence(lw) == pytest.approx(np.log(2.0), abs=1e-12)


@pytest.mark.parametrize("T, kind, a, expected", [
    (5, "linear", 2.0, [0.2, 0.4, 0.6, 0.8, 1.0]),
    (2, "power", 2.0, [0.25, 1.0]),
    (1, "power", 3.0, [1.0]),
])
def test_rho_schedule(T, kind, a, expected):
    np.testing.assert_allclose(rho_schedule(T, kind, a), expected)


@given(st.integers(1, 200), st.sampled_from(["linear", "power"]), st.floats(0.5, 4.0))
def test_rho_schedule_increasing_to_one(T, kind, a):
    r = rho_schedule(T, kind, a)
    assert r[-1] == 1.0
    assert np.all(np.diff(r) > 0)


def test_rho_schedule_contract():
    with pytest.raises(ContractError):
        rho_schedule(0)


def test_bridge_endpoints_and_geometric_example():
    assert bridge_combine("geometric", 1.0, -2.0, -4.0) == -4.0
    assert bridge_combine("mixture", 0.0, -2.0, -4.0) == -2.0
    assert bridge_combine("geometric", 0.5, -2.0, -4.0) == pytest.approx(-3.0)
    mix = bridge_combine("mixture", 0.5, -2.0, -4.0)
    assert mix == pytest.approx(np.log(0.5 * np.exp(-2.0) + 0.5 * np.exp(-4.0)))


def test_bridge_logdensity(gauss2):
    g0 = gaussian(np.zeros(2), 9 * np.eye(2))
    spec = BridgeSpec("geometric", g0, rho_schedule(4))
    x = np.array([0.5, -1.0])
    lg, lf = bridge_logdensity(spec, gauss2, 0, x)
    assert lg == pytest.approx(g0.log_density(x))
    assert lf == gauss2.log_density(x)
    lg, lf = bridge_logdensity(spec, gauss2, 4, x)
    assert lg == lf
    lg, _ = bridge_logdensity(spec, gauss2, 2, x)
    assert lg == pytest.approx(0.5 * g0.log_density(x) + 0.5 * lf)
    with pytest.raises(ContractError):
        bridge_logdensity(spec, gauss2, 5, x)


@pytest.mark.parametrize("kind", ["geometric", "mixture"])
def test_bridge_grad_matches_finite_difference(kind, gauss2):
    g0 = gaussian(np.ones(2), 4 * np.eye(2))
    rho = 0.3

    def lg(x):
        return bridge_combine(kind, rho, g0.log_density(x), gauss2.log_density(x))

    x = np.array([0.7, -0.4])
    lf, gf = gauss2.log_density_and_grad(x)
    l0, g0_ = g0.log_density_and_grad(x)
    g = bridge_grad(kind, rho, l0, g0_, lf, gf)
    h = 1e-6
    fd = [(lg(x + h * e) - lg(x - h * e)) / (2 * h) for e in np.eye(2)]
    np.testing.assert_allclose(g, fd, rtol=1e-6)


def test_bridge_spec_contracts(gauss2):
    with pytest.raises(ContractError):
        BridgeSpec("harmonic", gauss2, [1.0])
    with pytest.raises(ContractError):
        BridgeSpec("geometric", gauss2, [0.5, 0.9])
    with pytest.raises(ContractError):
        BridgeSpec("geometric", gauss2, [0.5, 0.4, 1.0])


def tempered(target, spec, seed=0, p=10, delta=0.5, **kw):
    rng = derive_run_stream(seed, 0)
    cfg = GrisConfig(population=p, drift=DriftConfig(delta=delta), **kw)
    init = initial_population(np.zeros(target.dim), 0.01 * np.eye(target.dim), p, rng)
    return tempered_gris_run(target, spec, cfg, init, rng)


@pytest.mark.parametrize("kind", ["geometric", "mixture"])
def test_degenerate_schedule_reproduces_gris(kind, gauss2):
    g0 = gaussian(np.zeros(2), 9 * np.eye(2))
    a = tempered(gauss2.clone(), BridgeSpec(kind, g0, [1.0]), seed=4, eval_budget=800)
    b = run(gauss2.clone(), seed=4, delta=0.5, eval_budget=800)
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.raw_log_weights, b.raw_log_weights)
    np.testing.assert_array_equal(a.recycled_log_weights, a.raw_log_weights)
    assert a.evals == b.evals


def test_weight_streams_differ_while_tempering(gauss2):
    g0 = gaussian(np.zeros(2), 9 * np.eye(2))
    tr = tempered(gauss2, BridgeSpec("geometric", g0, rho_schedule(5)), eval_budget=200)
    p = 10
    assert not np.array_equal(tr.raw_log_weights[:p], tr.recycled_log_weights[:p])
    # from iteration T on, rho = 1 and the streams coincide
    np.testing.assert_array_equal(tr.raw_log_weights[4 * p:], tr.recycled_log_weights[4 * p:])


def test_g0_not_charged(gauss2):
    g0 = gaussian(np.zeros(2), 9 * np.eye(2))
    tr = tempered(gauss2, BridgeSpec("mixture", g0, rho_schedule(3)), eval_budget=300)
    assert gauss2.counter.count == tr.evals == 300


def test_recycled_evidence_of_scaled_normal():
    f = gaussian([0.0], [[1.0]], log_scale=np.log(2.0))
    g0 = gaussian([0.0], [[2.0]])
    tr = tempered(f, BridgeSpec("geometric", g0, rho_schedule(10)), p=20, sample_size=10_000)
    assert tr.recycled_log_weights.size == 10_000
    assert abs(tr.log_evidence - np.log(2.0)) < 0.05


def test_recycled_mean_converges(gauss2):
    g0 = gaussian(np.zeros(2), 16 * np.eye(2))
    tr = tempered(gauss2, BridgeSpec("geometric", g0, rho_schedule(20)), eval_budget=3000)
    m, _ = tr.weighted_estimates()
    assert np.all(np.abs(m) < 4 * np.sqrt(np.array([1.0, 4.0]) / 300))


def test_weighted_estimator_root_n_rate():
    # adaptation frozen (t0 never reached) and no drift: plain sequential IS
    t = gaussian([1.0], [[1.0]])
    errs = {}
    for n in (500, 2000):
        e = []
        for r in range(40):
            rng = derive_run_stream(11, r)
            cfg = GrisConfig(population=20, sample_size=n, t0=10 ** 9, C0=4 * np.eye(1))
            init = initial_population([1.0], 4 * np.eye(1), 20, rng)
            tr = gris_run(t.clone(), cfg, init, rng)
            e.append(tr.weighted_estimates()[0][0] - 1.0)
        errs[n] = np.sqrt(np.mean(np.square(e)))
    assert 0.3 < errs[2000] / errs[500] < 0.75


def test_resampled_set_agrees_with_weighted(gauss2):
    diffs = []
    for r in range(20):
        tr = run(gauss2.clone(), run_index=r, delta=0.5, eval_budget=2000)
        diffs.append(tr.samples.mean(axis=0) - tr.weighted_estimates()[0])
    diffs = np.array(diffs)
    for k in range(2):
        assert stats.ttest_1samp(diffs[:, k], 0.0).pvalue > 0.01
