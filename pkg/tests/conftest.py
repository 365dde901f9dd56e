import itertools
import math

import numpy as np
import pytest
from scipy.special import logsumexp

from mcw.model import FiniteSizes, ModelSpec


def brute_log_Z(spec, sizes, t=None):
    """log Z by summing exp(-H) over every +-1 configuration."""
    sizes_t = tuple(sizes.sizes)
    n = sum(sizes_t)
    N = sizes.N
    labels = np.repeat(np.arange(len(sizes_t)), sizes_t)
    conf = np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
    S = np.stack([conf[:, labels == l].sum(axis=1) for l in range(len(sizes_t))], axis=1)
    energy = 0.5 / N * np.einsum("ip,pq,iq->i", S, spec.J, S) + S @ spec.h
    if t is not None:
        m = S / np.asarray(sizes_t, dtype=float)
        energy = energy + math.sqrt(N) * m @ (np.asarray(t) * np.sqrt(np.asarray(sizes.alpha_N)))
    return float(logsumexp(energy))


def bisect(fn, lo, hi, tol=1e-15):
    flo = fn(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def golden_max(fn, lo, hi, tol=1e-12):
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    while b - a > tol:
        if fn(c) > fn(d):
            b, d = d, c
            c = b - g * (b - a)
        else:
            a, c = c, d
            d = a + g * (b - a)
    x = 0.5 * (a + b)
    return x, fn(x)


def sizes_of(*ns, N=None):
    N = N or sum(ns)
    return FiniteSizes(N=N, sizes=tuple(ns), alpha_N=np.array(ns, dtype=float) / N)


@pytest.fixture
def cw05():
    return ModelSpec(J=[[0.5]], h=[0.2], alpha=[1.0])


@pytest.fixture
def cw15():
    return ModelSpec(J=[[1.5]], h=[0.0], alpha=[1.0])


@pytest.fixture
def k2():
    return ModelSpec(J=[[0.5, -0.7], [-0.7, 0.2]], h=[0.1, -0.1], alpha=[0.5, 0.5])
