import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from gris.adapt import new_adapt_state, update_moments
from gris.baselines import (NOISE_CHUNK, AmConfig, HmcConfig, MaltaConfig, TmalaConfig,
                            am_step, frobenius_project, hmc_step, init_chain, leapfrog, malta_proposal_mean,
                            malta_step, mh_accept, new_tmala_state, run_chain, run_chains,
                            tmala_proposal_mean, tmala_step, _gauss_logq)
from gris.core import ContractError, derive_run_stream
from gris.targets import gaussian

STD1 = gaussian([0.0], [[1.0]])


class ReplayRng:
    """Serves draws in the order the lockstep driver generates them for one chain."""

    def __init__(self, seed, width):
        self.g = np.random.default_rng(seed)
        self.width = width
        self.k = NOISE_CHUNK

    def _fill(self):
        self.z = self.g.standard_normal((NOISE_CHUNK, self.width))
        self.u = self.g.random(NOISE_CHUNK)
        self.k, self.uk = 0, 0

    def standard_normal(self, size):
        if self.k == NOISE_CHUNK:
            self._fill()
        self.k += 1
        return self.z[self.k - 1].copy()

    def random(self):
        self.uk += 1
        return self.u[self.uk - 1]


@pytest.mark.parametrize("logf_prop, expected", [(0.0, True), (-np.inf, False)])
def test_mh_accept_trivial(logf_prop, expected, rng):
    assert all(mh_accept(0.0, logf_prop, 0.3, 0.3, rng) == expected for _ in range(200))


def test_mh_accept_half_probability(rng):
    hits = sum(mh_accept(0.0, np.log(0.5), 0.0, 0.0, rng) for _ in range(10_000))
    assert abs(hits / 10_000 - 0.5) < 0.02


def test_mh_accept_uses_reverse_over_forward(rng):
    # f ratio 1, q ratio q_rev / q_fwd = 0.25
    hits = sum(mh_accept(0.0, 0.0, np.log(4.0), 0.0, rng) for _ in range(10_000))
    assert abs(hits / 10_000 - 0.25) < 0.02


def test_am_rejection_records_previous(rng):
    t = gaussian([0.0], [[1e-6]])
    state = init_chain(t, [0.0])
    adapt = update_moments(new_adapt_state(1, t0=10, C0=[[100.0]]), state.current)
    rejected = 0
    for _ in range(50):
        new, adapt = am_step(t, state, adapt, rng)
        if new.accepted_count == state.accepted_count:
            rejected += 1
            np.testing.assert_array_equal(new.current, state.current)
        assert new.step_count == state.step_count + 1
        state = new
    assert rejected > 0


def test_am_proposal_centred_at_current(monkeypatch):
    # with zero noise the proposal is the current point itself
    class Zero:
        def standard_normal(self, size):
            return np.zeros(size)

        def random(self):
            return 0.5

    t = gaussian([0.0, 0.0], np.eye(2))
    state = init_chain(t, [1.0, -1.0])
    adapt = update_moments(new_adapt_state(2, t0=0), state.current)
    new, _ = am_step(t, state, adapt, Zero())
    np.testing.assert_array_equal(new.current, [1.0, -1.0])


def test_malta_proposal_mean_example():
    assert malta_proposal_mean([2.0], [-2.0], 0.5, np.eye(1)) == pytest.approx([1.0])


def test_tmala_proposal_mean_example():
    assert tmala_proposal_mean([2.0], [-2.0], np.eye(1), 1.0, 10.0, np.eye(1)) == pytest.approx([1.0])


def test_malta_kernel_asymmetric():
    x, y = np.array([2.0]), np.array([0.3])
    L = np.eye(1)
    fwd = _gauss_logq(y, malta_proposal_mean(x, -x, 0.5, L), L)
    rev = _gauss_logq(x, malta_proposal_mean(y, -y, 0.5, L), L)
    assert fwd != pytest.approx(rev)


def test_malta_zero_drift_is_random_walk():
    t = gaussian([0.0, 0.0], np.diag([1.0, 4.0]))
    C = 0.8 * np.eye(2)
    L = np.linalg.cholesky(C)
    rng_a, rng_b = derive_run_stream(5, 0), derive_run_stream(5, 0)
    a = init_chain(t, [0.5, 0.5], need_grad=True)
    b = init_chain(t, [0.5, 0.5])
    adapt = update_moments(new_adapt_state(2, t0=10 ** 6, C0=C), b.current)
    for _ in range(300):
        a = malta_step(t, a, L, 0.0, rng_a)
        b, adapt = am_step(t, b, adapt, rng_b)
        np.testing.assert_array_equal(a.current, b.current)


def test_tmala_zero_drift_double_matches_random_walk():
    t = gaussian([0.0], [[1.0]])
    ts = new_tmala_state(1, [0.0], C0=[[1.0]], s_d=1.0)
    rng_a, rng_b = derive_run_stream(6, 0), derive_run_stream(6, 0)
    a = init_chain(t, [0.0], need_grad=True)
    b = init_chain(t, [0.0])
    L = ts.factor
    for _ in range(200):
        # freeze the random-walk scale at the one T-MALA is about to use
        L = ts.factor
        adapt = update_moments(new_adapt_state(1, t0=10 ** 6, C0=L @ L.T), b.current)
        a, ts = tmala_step(t, a, ts, rng_a, drift_fn=lambda x, g: np.zeros_like(x))
        b, _ = am_step(t, b, adapt, rng_b)
        np.testing.assert_allclose(a.current, b.current, rtol=1e-12)


def test_tmala_projection_holds(rng):
    t = gaussian([0.0, 0.0], 50 * np.eye(2))
    state = init_chain(t, [0.0, 0.0], need_grad=True)
    ts = new_tmala_state(2, [0.0, 0.0], A1=3.0)
    for _ in range(300):
        state, ts = tmala_step(t, state, ts, rng)
        assert np.linalg.norm(ts.cov) <= 3.0 * (1 + 1e-12)
        assert 1e-4 <= ts.s_d <= 3.0


def test_frobenius_project_examples():
    np.testing.assert_allclose(frobenius_project(2 * np.eye(2), 2.0), np.sqrt(2) * np.eye(2))
    C = np.array([[0.5, 0.1], [0.1, 0.5]])
    assert frobenius_project(C, 10.0) is C or np.array_equal(frobenius_project(C, 10.0), C)
    with pytest.raises(ContractError):
        frobenius_project(C, 0.0)


@given(arrays(float, (3, 3), elements=st.floats(-100, 100)), st.floats(0.1, 50))
def test_frobenius_project_norm_and_idempotence(C, A1):
    P = frobenius_project(C, A1)
    assert np.linalg.norm(P) == pytest.approx(min(np.linalg.norm(C), A1), rel=1e-12, abs=1e-300)
    np.testing.assert_allclose(frobenius_project(P, A1), P, rtol=1e-12)


def gauss_grad(x):
    return -x


def test_leapfrog_zero_steps_identity():
    x, p, _, ok = leapfrog([1.0, 2.0], [0.3, -0.1], gauss_grad, 0.1, 0)
    assert ok
    np.testing.assert_array_equal(x, [1.0, 2.0])
    np.testing.assert_array_equal(p, [0.3, -0.1])


@given(arrays(float, 2, elements=st.floats(-3, 3)), arrays(float, 2, elements=st.floats(-3, 3)),
       st.floats(0.01, 0.5), st.integers(1, 30))
def test_leapfrog_reversible(x0, p0, eps, n):
    x1, p1, _, _ = leapfrog(x0, p0, gauss_grad, eps, n)
    x2, p2, _, _ = leapfrog(x1, -p1, gauss_grad, eps, n)
    np.testing.assert_allclose(x2, x0, atol=1e-10)
    np.testing.assert_allclose(-p2, p0, atol=1e-10)


def test_leapfrog_energy_conservation():
    x, p, _, _ = leapfrog([1.0], [0.5], gauss_grad, 0.01, 100)
    h0 = 0.5 * 1.0 + 0.5 * 0.25
    h1 = 0.5 * x[0] ** 2 + 0.5 * p[0] ** 2
    assert abs(h1 - h0) < 1e-3


def test_leapfrog_divergence_flag():
    def bad(x):
        return np.array([np.nan]) if x[0] > 1 else -x

    *_, ok = leapfrog([0.9], [5.0], bad, 0.1, 10)
    assert not ok


def test_hmc_small_step_accepts(rng):
    state = init_chain(STD1, [0.0], need_grad=True)
    cfg = HmcConfig(step_size=1e-3, n_leapfrog=5)
    for _ in range(2000):
        state = hmc_step(STD1, state, cfg, rng)
    assert state.acceptance_rate > 0.99


def test_hmc_divergence_rejected(rng):
    from gris.core import TargetModel

    def lg(x):
        return (-0.5 * x[0] ** 2, np.array([np.inf if abs(x[0]) > 0.5 else -x[0]]))

    t = TargetModel(1, lambda x: lg(x)[0], lg)
    state = init_chain(t, [0.0], need_grad=True)
    state = hmc_step(t, state, HmcConfig(step_size=2.0, n_leapfrog=3), rng)
    assert state.accepted_count == 0
    assert state.current[0] == 0.0


def test_config_contracts():
    with pytest.raises(ContractError):
        HmcConfig(step_size=0.0)
    with pytest.raises(ContractError):
        HmcConfig(n_leapfrog=0)
    with pytest.raises(ContractError):
        run_chain("gibbs", STD1, [0.0], derive_run_stream(0, 0), 100)
    with pytest.raises(ContractError):
        run_chain("am", STD1, [0.0, 0.0], derive_run_stream(0, 0), 100)


# the lockstep driver against the single-step kernels

def single_am(t, x0, rng, n, cfg):
    state = init_chain(t, x0)
    adapt = update_moments(new_adapt_state(t.dim, t0=cfg.t0, C0=cfg.C0), state.current)
    xs = [state.current]
    for _ in range(n):
        state, adapt = am_step(t, state, adapt, rng)
        xs.append(state.current)
    return np.array(xs)


def single_malta(t, x0, rng, n, cfg):
    state = init_chain(t, x0, need_grad=True)
    L = np.linalg.cholesky(cfg.C)
    xs = [state.current]
    for _ in range(n):
        state = malta_step(t, state, L, cfg.delta, rng)
        xs.append(state.current)
    return np.array(xs)


def single_tmala(t, x0, rng, n, cfg):
    state = init_chain(t, x0, need_grad=True)
    ts = new_tmala_state(t.dim, x0, delta=cfg.delta)
    xs = [state.current]
    for _ in range(n):
        state, ts = tmala_step(t, state, ts, rng)
        xs.append(state.current)
    return np.array(xs)


def single_hmc(t, x0, rng, n, cfg):
    state = init_chain(t, x0, need_grad=True)
    xs = [state.current]
    for _ in range(n):
        state = hmc_step(t, state, cfg, rng)
        xs.append(state.current)
    return np.array(xs)


@pytest.mark.parametrize("kind, cfg, single", [
    ("am", AmConfig(t0=20, C0=np.eye(2)), single_am),
    ("malta", MaltaConfig(delta=0.5, C=np.diag([1.0, 2.0])), single_malta),
    ("tmala", TmalaConfig(delta=1.0), single_tmala),
    ("hmc", HmcConfig(step_size=0.3, n_leapfrog=4), single_hmc),
])
def test_driver_matches_single_steps(kind, cfg, single):
    t = gaussian([0.0, 1.0], [[1.0, 0.3], [0.3, 2.0]])
    x0 = np.array([0.5, 0.5])
    cost = cfg.n_leapfrog if kind == "hmc" else 1
    n = 400
    tr = run_chain(kind, t.clone(), x0, np.random.default_rng(9), 1 + n * cost, cfg)
    ref = single(t.clone(), x0, ReplayRng(9, 2), n, cfg)
    # batched and scalar linear algebra round differently; the accept pattern must agree
    moved = np.any(np.diff(tr.samples, axis=0) != 0, axis=1)
    np.testing.assert_array_equal(moved, np.any(np.diff(ref, axis=0) != 0, axis=1))
    np.testing.assert_allclose(tr.samples, ref, rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("kind", ["am", "malta", "tmala", "hmc"])
def test_lockstep_equals_solo(kind):
    t = gaussian([0.0, 0.0], np.diag([1.0, 4.0]))
    together = run_chains(kind, t.clone(), np.zeros(2), [derive_run_stream(2, r) for r in range(3)], 700)
    for r in range(3):
        solo = run_chain(kind, t.clone(), np.zeros(2), derive_run_stream(2, r), 700)
        np.testing.assert_array_equal(solo.samples, together[r].samples)
        assert solo.acceptance_rate == together[r].acceptance_rate


@pytest.mark.parametrize("kind", ["am", "malta", "tmala", "hmc"])
def test_driver_accounting(kind):
    t = gaussian([0.0], [[1.0]])
    cfg = HmcConfig(step_size=0.5, n_leapfrog=3) if kind == "hmc" else None
    tr = run_chain(kind, t, [0.0], derive_run_stream(0, 0), 1000, cfg, checkpoint_stride=100)
    cost = 3 if kind == "hmc" else 1
    assert tr.evals == t.counter.count == 1 + cost * ((1000 - 1) // cost)
    # every step records a sample, accepted or not
    assert len(tr.samples) == 1 + (tr.evals - 1) // cost
    assert tr.checkpoints[-1].eval_count == tr.evals
    assert all(b.eval_count > a.eval_count for a, b in zip(tr.checkpoints, tr.checkpoints[1:]))
    np.testing.assert_allclose(tr.checkpoints[-1].mean, tr.samples.mean(axis=0))
    np.testing.assert_allclose(tr.checkpoints[-1].var, tr.samples.var(axis=0), atol=1e-10)


def test_driver_deterministic():
    a = run_chain("tmala", STD1.clone(), [0.0], derive_run_stream(8, 0), 500)
    b = run_chain("tmala", STD1.clone(), [0.0], derive_run_stream(8, 0), 500)
    np.testing.assert_array_equal(a.samples, b.samples)


@pytest.mark.parametrize("kind, cfg", [
    ("am", AmConfig(t0=100, C0=np.eye(2), adapt_interval=10)),
    ("malta", MaltaConfig(delta=0.5, C=np.diag([1.0, 4.0]))),
    ("tmala", TmalaConfig(delta=1.0, refresh_interval=10)),
    ("hmc", HmcConfig(step_size=0.5, n_leapfrog=5)),
])
def test_moments_match_within_four_se(kind, cfg):
    t = gaussian([0.0, 0.0], np.diag([1.0, 4.0]))
    R = 20
    traces = run_chains(kind, t, np.zeros(2), [derive_run_stream(31, r) for r in range(R)], 10_000, cfg)
    means = np.array([tr.checkpoints[-1].mean for tr in traces])
    var = np.array([tr.checkpoints[-1].var for tr in traces])
    for est, truth in ((means, [0.0, 0.0]), (var, [1.0, 4.0])):
        se = est.std(axis=0, ddof=1) / np.sqrt(R)
        assert np.all(np.abs(est.mean(axis=0) - truth) < 4 * se)
