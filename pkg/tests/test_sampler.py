import math

import numpy as np
import pytest

from mcw.errors import MixingFailure, ValidationError
from mcw.exact import Interval, moments, sector_law
from mcw.landscape import global_maximizers
from mcw.model import ModelSpec, finite_sizes
from mcw.sampler import (
    ALL_DOWN,
    ALL_UP,
    ChainConfig,
    Init,
    _initial_spins,
    batch_means_se,
    glauber_run,
    multichain,
    split_rhat,
)

from conftest import sizes_of


def gibbs_3spin(spec, sizes):
    labels = np.repeat(np.arange(len(sizes.sizes)), sizes.sizes)
    w = []
    for code in range(8):
        s = np.array([1.0 if code >> j & 1 else -1.0 for j in range(3)])
        S = np.array([s[labels == l].sum() for l in range(len(sizes.sizes))])
        w.append(S @ spec.J @ S / (2 * sizes.N) + spec.h @ S)
    w = np.exp(np.array(w) - max(w))
    return w / w.sum()


def test_config_validation():
    with pytest.raises(ValidationError):
        ChainConfig(10, burn_in_sweeps=0)
    with pytest.raises(ValidationError):
        ChainConfig(10, thinning=0)
    with pytest.raises(ValidationError):
        Init("Sideways")
    with pytest.raises(ValidationError):
        Init("AtPoint")


def test_reproducible_and_cache_consistent(k2):
    sizes = finite_sizes(k2, 50)
    cfg = ChainConfig(50, seed=7, burn_in_sweeps=10, sample_sweeps=200, thinning=3)
    a, b = glauber_run(k2, sizes, cfg), glauber_run(k2, sizes, cfg)
    assert np.array_equal(a.samples, b.samples) and len(a.samples) == 66
    assert np.array_equal(a.cache, a.recomputed_sums())
    c = glauber_run(k2, sizes, ChainConfig(50, seed=8, burn_in_sweeps=10, sample_sweeps=200))
    assert not np.array_equal(a.samples[:66], c.samples[:66])


def test_at_point_init(cw15):
    sizes = finite_sizes(cw15, 100)
    spins = _initial_spins(sizes, Init.at([0.5]), np.random.default_rng(0))
    assert spins.sum() == 50 and set(np.unique(spins)) == {-1, 1}


def test_free_spins_mean_zero():
    spec = ModelSpec(J=[[0.0]], h=[0.0], alpha=[1.0])
    r = glauber_run(spec, finite_sizes(spec, 1000), ChainConfig(1000, seed=1, burn_in_sweeps=10, sample_sweeps=2000))
    m = r.samples[:, 0]
    assert abs(m.mean()) <= 3 * batch_means_se(m)


def test_mean_matches_landscape(cw05):
    mu = global_maximizers(cw05).unique().x[0]
    r = glauber_run(cw05, finite_sizes(cw05, 2000), ChainConfig(2000, seed=2, burn_in_sweeps=200, sample_sweeps=3000))
    m = r.samples[:, 0]
    # finite-N bias is O(1/N), far below the Monte Carlo error
    assert abs(m.mean() - mu) <= 3 * batch_means_se(m)


def test_detailed_balance_small():
    spec = ModelSpec(J=[[0.8, -1.1], [-1.1, 0.3]], h=[0.2, -0.4], alpha=[2 / 3, 1 / 3])
    sizes = sizes_of(2, 1)
    r = glauber_run(spec, sizes, ChainConfig(3, seed=5, burn_in_sweeps=10, sample_sweeps=200_000), histogram=True)
    emp = r.histogram / r.histogram.sum()
    assert 0.5 * np.abs(emp - gibbs_3spin(spec, sizes)).sum() < 0.01


def test_histogram_size_limit(cw05):
    with pytest.raises(ValidationError):
        glauber_run(cw05, finite_sizes(cw05, 30), ChainConfig(30, sample_sweeps=1), histogram=True)


def test_subcritical_rhat(cw05):
    res = multichain(cw05, finite_sizes(cw05, 100), ChainConfig(100, seed=1, burn_in_sweeps=100, sample_sweeps=2000),
                     chains=4)
    assert np.all(res.rhat < 1.02) and res.pooled.shape == (8000, 1)


def test_two_phase_refused(cw15):
    sizes = finite_sizes(cw15, 200)
    cfg = ChainConfig(200, seed=1, burn_in_sweeps=100, sample_sweeps=1000)
    with pytest.raises(MixingFailure) as exc:
        multichain(cw15, sizes, cfg, chains=2, inits=[ALL_UP, ALL_DOWN])
    assert np.all(exc.value.rhat > 1.05)


def test_per_basin_box_filter(cw15):
    sizes = finite_sizes(cw15, 200)
    cfg = ChainConfig(200, seed=1, burn_in_sweeps=100, sample_sweeps=1000, init=Init.at([0.86]))
    res = multichain(cw15, sizes, cfg, chains=2, box=[Interval(0.0, 1.0, True, False)])
    assert np.all(res.pooled > 0) and np.all(res.kept_fraction > 0.99)


def test_single_chain_rhat_undefined(cw05):
    res = multichain(cw05, finite_sizes(cw05, 50), ChainConfig(50, sample_sweeps=100), chains=1)
    assert res.rhat is None and "undefined" in res.rhat_report()
    assert split_rhat([np.zeros((10, 1))]) is None


def test_threaded_chains_match_serial(cw05):
    sizes = finite_sizes(cw05, 80)
    cfg = ChainConfig(80, seed=11, burn_in_sweeps=20, sample_sweeps=300)
    a = multichain(cw05, sizes, cfg, chains=3, threads=1)
    b = multichain(cw05, sizes, cfg, chains=3, threads=3)
    assert all(np.array_equal(x, y) for x, y in zip(a.chains, b.chains))


def test_variance_against_exact(cw05):
    N = 400
    ref = moments(sector_law(cw05, N)).rescaled_cov[0, 0]
    res = multichain(cw05, finite_sizes(cw05, N), ChainConfig(N, seed=3, burn_in_sweeps=300, sample_sweeps=8000),
                     chains=6)
    v = np.array([(math.sqrt(N) * c[:, 0]).var() for c in res.chains])
    se = v.std(ddof=1) / math.sqrt(len(v))
    assert abs(v.mean() - ref) <= 3 * se
