"""Glauber (heat-bath) dynamics on the block Hamiltonian.

    -H_N = (1/2N) sum_pq J_pq S_p S_q + sum_p h_p S_p,   S_p = N_p m_p

The kernel keeps the integer species sums S_p as its cache, so one flip costs O(K).
A sweep is ``total`` proposals at uniformly random sites.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import MixingFailure, ValidationError
from .exact import as_box
from .model import FiniteSizes, ModelSpec, species_labels

RHAT_LIMIT = 1.05
HISTOGRAM_MAX_SPINS = 20


@dataclass(frozen=True)
class Init:
    kind: str = "Random"
    point: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("AllUp", "AllDown", "Random", "AtPoint"):
            raise ValidationError(f"unknown init {self.kind!r}")
        if (self.kind == "AtPoint") != (self.point is not None):
            raise ValidationError("AtPoint needs a point, other inits take none")

    @classmethod
    def at(cls, x):
        return cls("AtPoint", tuple(float(v) for v in np.atleast_1d(x)))


ALL_UP, ALL_DOWN, RANDOM = Init("AllUp"), Init("AllDown"), Init("Random")


@dataclass(frozen=True)
class ChainConfig:
    N: int
    seed: int = 0
    burn_in_sweeps: int = 1000
    sample_sweeps: int = 10_000
    thinning: int = 1
    init: Init = RANDOM

    def __post_init__(self):
        if self.burn_in_sweeps < 1:
            raise ValidationError("burn_in_sweeps must be >= 1")
        if self.thinning < 1:
            raise ValidationError("thinning must be >= 1")
        if self.sample_sweeps < 0:
            raise ValidationError("sample_sweeps must be >= 0")


@numba.njit(cache=True, nogil=True)
def _sweeps(spins, labels, S, J, h, inv_N, n_sweeps, record_every, out, hist):
    n = spins.size
    K = S.size
    row = 0
    for sweep in range(n_sweeps):
        for _ in range(n):
            i = np.random.randint(n)
            p = labels[i]
            s = spins[i]
            local = 0.0
            for q in range(K):
                local += J[p, q] * S[q]
            # change of -H when spin i flips
            gain = -2.0 * s * (local * inv_N + h[p]) + 2.0 * J[p, p] * inv_N
            if np.random.random() * (1.0 + math.exp(-gain)) < 1.0:
                spins[i] = -s
                S[p] -= 2 * s
        if record_every > 0 and (sweep + 1) % record_every == 0:
            for q in range(K):
                out[row, q] = S[q]
            row += 1
        if hist.size > 0:
            code = 0
            for j in range(n):
                if spins[j] > 0:
                    code |= 1 << j
            hist[code] += 1
    return row


@numba.njit(cache=True)
def _seed_numba(seed):
    np.random.seed(seed)


@dataclass(frozen=True, eq=False)
class ChainResult:
    samples: np.ndarray
    spins: np.ndarray
    cache: np.ndarray
    sizes: FiniteSizes
    histogram: np.ndarray | None = None

    def recomputed_sums(self):
        labels = species_labels(self.sizes)
        return np.bincount(labels, weights=self.spins, minlength=self.sizes.K).astype(np.int64)


def _initial_spins(sizes: FiniteSizes, init: Init, rng):
    parts = []
    for l, n in enumerate(sizes.sizes):
        if init.kind == "AllUp":
            s = np.ones(n, dtype=np.int64)
        elif init.kind == "AllDown":
            s = -np.ones(n, dtype=np.int64)
        elif init.kind == "Random":
            s = rng.choice(np.array([-1, 1], dtype=np.int64), size=n)
        else:
            x = float(np.clip(init.point[l], -1.0, 1.0))
            up = int(round(n * (1.0 + x) / 2.0))
            s = np.where(np.arange(n) < up, 1, -1).astype(np.int64)
            rng.shuffle(s)
        parts.append(s)
    return np.concatenate(parts)


def _validate(spec: ModelSpec, sizes: FiniteSizes, config: ChainConfig):
    if not spec.is_ising:
        raise ValidationError("the sampler needs the Ising prior")
    if len(sizes.sizes) != spec.K:
        raise ValidationError("sizes do not match the model")
    if config.init.kind == "AtPoint" and len(config.init.point) != spec.K:
        raise ValidationError(f"AtPoint needs K={spec.K} coordinates")


def glauber_run(spec: ModelSpec, sizes: FiniteSizes, config: ChainConfig, histogram: bool = False) -> ChainResult:
    """Run one heat-bath chain; returns magnetization samples every ``thinning`` sweeps."""
    _validate(spec, sizes, config)
    rng = np.random.default_rng(config.seed)
    spins = _initial_spins(sizes, config.init, rng)
    labels = species_labels(sizes).astype(np.int64)
    S = np.bincount(labels, weights=spins, minlength=spec.K).astype(np.int64)
    J = np.ascontiguousarray(spec.J, dtype=float)
    h = np.ascontiguousarray(spec.h, dtype=float)
    inv_N = 1.0 / sizes.N
    if histogram and spins.size > HISTOGRAM_MAX_SPINS:
        raise ValidationError(f"state histogram needs at most {HISTOGRAM_MAX_SPINS} spins")
    hist = np.zeros(1 << spins.size if histogram else 0, dtype=np.int64)
    _seed_numba(int(rng.integers(2**31 - 1)))
    empty = np.zeros((0, spec.K), dtype=np.int64)
    _sweeps(spins, labels, S, J, h, inv_N, config.burn_in_sweeps, 0, empty, np.zeros(0, dtype=np.int64))
    n_rows = config.sample_sweeps // config.thinning
    out = np.zeros((n_rows, spec.K), dtype=np.int64)
    _sweeps(spins, labels, S, J, h, inv_N, config.sample_sweeps, config.thinning, out, hist)
    m = out / np.asarray(sizes.sizes, dtype=float)
    return ChainResult(samples=m, spins=spins, cache=S, sizes=sizes,
                       histogram=hist if histogram else None)


def split_rhat(chains) -> np.ndarray | None:
    """Per-component split-R-hat over a list of (n, K) sample arrays; None for fewer than two chains."""
    if len(chains) < 2:
        return None
    n = min(len(c) for c in chains) // 2
    if n < 2:
        raise ValidationError("split-R-hat needs at least 4 samples per chain")
    halves = np.stack([part for c in chains for part in (c[:n], c[n:2 * n])])
    means = halves.mean(axis=1)
    W = halves.var(axis=1, ddof=1).mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / W)
    r = np.where(W > 0, r, np.where(B > 0, np.inf, 1.0))
    return r


@dataclass(frozen=True, eq=False)
class MultiChainResult:
    chains: list
    rhat: np.ndarray | None
    kept_fraction: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def pooled(self):
        return np.vstack(self.chains)

    def rhat_report(self):
        return "undefined (single chain)" if self.rhat is None else self.rhat.tolist()


def chain_seeds(seed: int, chains: int):
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(chains)]


def multichain(spec: ModelSpec, sizes: FiniteSizes, config: ChainConfig, chains: int,
               box=None, inits=None, threads: int = 1, rhat_limit: float = RHAT_LIMIT) -> MultiChainResult:
    """Independent chains with spawned seeds, split-R-hat, and refusal to pool unmixed chains.

    ``box`` discards samples outside a K-box (per-basin pooling); ``inits`` overrides the
    initial state chain by chain.
    """
    if chains < 1:
        raise ValidationError("need at least one chain")
    inits = list(inits) if inits is not None else [config.init] * chains
    if len(inits) != chains:
        raise ValidationError("one init per chain")
    configs = [
        ChainConfig(config.N, s, config.burn_in_sweeps, config.sample_sweeps, config.thinning, ini)
        for s, ini in zip(chain_seeds(config.seed, chains), inits)
    ]
    run = lambda c: glauber_run(spec, sizes, c).samples  # noqa: E731
    if threads > 1 and chains > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(run, configs))
    else:
        samples = [run(c) for c in configs]
    kept = np.ones(chains)
    if box is not None:
        box = as_box(box, spec.K)
        filtered = []
        for i, s in enumerate(samples):
            keep = np.all([iv.contains(s[:, l]) for l, iv in enumerate(box)], axis=0)
            kept[i] = keep.mean() if len(s) else 0.0
            filtered.append(s[keep])
        samples = filtered
    rhat = split_rhat(samples)
    if rhat is not None and np.any(rhat > rhat_limit):
        raise MixingFailure(
            f"split-R-hat {np.round(rhat, 4).tolist()} exceeds {rhat_limit}; chains sit in different basins",
            rhat=rhat,
        )
    return MultiChainResult(chains=samples, rhat=rhat, kept_fraction=kept)


def batch_means_se(values, batches: int = 50) -> float:
    """Standard error of the mean of a correlated series by non-overlapping batch means."""
    v = np.asarray(values, dtype=float)
    b = len(v) // batches
    if b < 1:
        raise ValidationError("series shorter than the number of batches")
    means = v[: b * batches].reshape(batches, b).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(batches))
