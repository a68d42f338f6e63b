import numpy as np
import pytest

from dqme_nqs.bath import DissipatonSet, decompose_all, ReservoirSpec
from dqme_nqs.errors import EstimatorError, SamplerError
from dqme_nqs.liouvillian import Epoch, Generator
from dqme_nqs.rbm import LinearAnsatz, RbmDensityTensor
from dqme_nqs.sampler import (
    empirical_distribution, estimate_moments, exact_distribution, metropolis_sample,
)
from dqme_nqs.space import SpaceIndex
from dqme_nqs.tdvp import assemble


def benchmark():
    spec = (ReservoirSpec("L", 1.0, 1.0, 10.0, 0.0, (0,)),)
    d = decompose_all(spec, "pade", 0)
    sp = SpaceIndex(1, d.n_states, 2)
    gen = Generator(sp, Epoch(np.diag([0.0, 0.7]), d))
    est = RbmDensityTensor(n_sys=1, max_tier=2, n_hidden=1, n_aux=1, init_scale=0.5, init_bias=0.0,
                           random_state=3).initialize(d.n_states)
    return gen, est


def test_degenerate_support():
    sp = SpaceIndex(2, 0, 0)
    lin = LinearAnsatz(sp)
    lin.coef[sp.rank(0)] = 1.0
    s = metropolis_sample(lin, sp, 2000, seed=1)
    assert np.all(s.words == 0) and s.acceptance == 0


def test_uniform_target():
    sp = SpaceIndex(1, 2, 2)
    lin = LinearAnsatz(sp, np.ones(sp.count))
    n = 100_000
    s = metropolis_sample(lin, sp, n, seed=2)
    freq = empirical_distribution(s, sp)
    p = 1 / sp.count
    assert np.all(np.abs(freq - p) <= 4 * np.sqrt(p * (1 - p) / n) * np.sqrt(max(s.autocorr_time, 1)))


def test_never_leaves_the_retained_space():
    gen, est = benchmark()
    s = metropolis_sample(est, gen.space, 20_000, seed=5)
    assert np.all(gen.space.rank(s.words.ravel()) >= 0)
    assert s.n_samples == 20_000 and 0 < s.acceptance <= 1


def test_deterministic_given_seed():
    gen, est = benchmark()
    a = metropolis_sample(est, gen.space, 5000, seed=9)
    b = metropolis_sample(est, gen.space, 5000, seed=9)
    c = metropolis_sample(est, gen.space, 5000, seed=10)
    np.testing.assert_array_equal(a.words, b.words)
    assert not np.array_equal(a.words, c.words)


def test_distribution_converges():
    gen, est = benchmark()
    s = metropolis_sample(est, gen.space, 200_000, seed=0)
    tv = 0.5 * np.abs(empirical_distribution(s, gen.space) - exact_distribution(est, gen.space)).sum()
    assert tv < 0.02


def test_standard_error_shrinks_with_samples():
    gen, est = benchmark()
    small = estimate_moments(metropolis_sample(est, gen.space, 20_000, seed=4), est, gen)
    large = estimate_moments(metropolis_sample(est, gen.space, 320_000, seed=4), est, gen)
    ratio = np.median(large.F_err / small.F_err)
    assert 0.1 < ratio < 0.5  # ideal 1/4


def test_sampled_moments_agree_with_exact_sums():
    gen, est = benchmark()
    exact = assemble(est, gen)
    ne = estimate_moments(metropolis_sample(est, gen.space, 200_000, seed=8), est, gen)
    assert ne.mode == "sampled"
    assert np.all(np.abs(ne.F - exact.F) <= 5 * ne.F_err + 1e-12)
    assert np.all(np.abs(ne.S - exact.S) <= 5 * ne.S_err + 1e-12)
    assert abs(ne.lrho2 - exact.lrho2) <= 5 * ne.lrho2_err + 1e-12


def test_zero_generator_has_zero_sampled_force():
    sp = SpaceIndex(2, 0, 0)
    gen = Generator(sp, Epoch(np.zeros((4, 4)), DissipatonSet(())))
    lin = LinearAnsatz(sp, np.random.default_rng(0).standard_normal(sp.count) + 1.0)
    ne = estimate_moments(metropolis_sample(lin, sp, 4000, seed=0), lin, gen)
    assert np.all(ne.F == 0) and ne.lrho2 == 0


def test_errors():
    sp = SpaceIndex(1, 2, 1)
    with pytest.raises(SamplerError):
        metropolis_sample(LinearAnsatz(sp), sp, 100)
    gen, est = benchmark()
    s = metropolis_sample(est, gen.space, 100, seed=0)
    s.words = s.words[:0]
    with pytest.raises(EstimatorError):
        estimate_moments(s, est, gen)
