"""Exact finite-N Ising computations by summing over magnetization sectors.

A sector is a vector x of species magnetizations on the grid
S_l = {-1 + 2n/N_l : n = 0..N_l}; it holds prod_l binom(N_l, N_l(1+x_l)/2) spin
configurations of equal energy. Weights are kept as logs. The counting-measure
convention is used throughout (each configuration weighs 1, not 2**-N).
"""

from __future__ import annotations

import functools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import BudgetExceeded, DomainError, NumericalError, ValidationError
from .landscape import FreeEnergy, binary_entropy, global_maximizers
from .model import FiniteSizes, ModelSpec, build_delta, finite_sizes

DEFAULT_BUDGET = 20_000_000
CHUNK_CELLS = 1 << 20


# --------------------------------------------------------------------------
# combinatorics
# --------------------------------------------------------------------------


def _log_counts(n):
    k = np.arange(n + 1)
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def log_binomial_count(n: int, x):
    """log of the number of +-1 configurations of n spins with mean x."""
    x = np.asarray(x, dtype=float)
    occ = n * (1.0 + x) / 2.0
    k = np.rint(occ)
    if np.any(np.abs(occ - k) > 1e-9 * max(n, 1)) or np.any(k < 0) or np.any(k > n):
        raise DomainError(f"x={x} is not a sector value for {n} spins")
    out = gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)
    return float(out) if out.ndim == 0 else out


def stirling_form(n: int, x):
    """Leading Stirling approximation of log A_n(x) for |x| < 1."""
    x = np.asarray(x, dtype=float)
    return 0.5 * np.log(2.0 / (np.pi * n * (1.0 - x * x))) - n * binary_entropy(x)


@functools.lru_cache(maxsize=None)
def stirling_constant(n_max: int = 1000) -> float:
    """Smallest C with A_n(x) >= exp(-n I(x)) / (C sqrt(n)) for all n <= n_max.

    Returns log C.
    """
    worst = -np.inf
    for n in range(1, n_max + 1):
        x = -1.0 + 2.0 * np.arange(n + 1) / n
        gap = -n * binary_entropy(x) - _log_counts(n) - 0.5 * math.log(n)
        worst = max(worst, float(gap.max()))
    return worst


# --------------------------------------------------------------------------
# sector laws
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    lo_open: bool = False
    hi_open: bool = False

    def contains(self, x):
        x = np.asarray(x)
        left = x > self.lo if self.lo_open else x >= self.lo
        right = x < self.hi if self.hi_open else x <= self.hi
        return left & right

    def intersect(self, other: "Interval") -> "Interval":
        if other.lo > self.lo or (other.lo == self.lo and other.lo_open):
            lo, lo_open = other.lo, other.lo_open
        else:
            lo, lo_open = self.lo, self.lo_open
        if other.hi < self.hi or (other.hi == self.hi and other.hi_open):
            hi, hi_open = other.hi, other.hi_open
        else:
            hi, hi_open = self.hi, self.hi_open
        return Interval(lo, hi, lo_open, hi_open)

    def __str__(self):
        return f"{'(' if self.lo_open else '['}{self.lo:g}:{self.hi:g}{')' if self.hi_open else ']'}"


def as_box(box, K):
    out = []
    for iv in box:
        out.append(iv if isinstance(iv, Interval) else Interval(float(iv[0]), float(iv[1])))
    if len(out) != K:
        raise ValidationError(f"box has {len(out)} intervals, expected {K}")
    return tuple(out)


def full_box(K):
    return tuple(Interval(-1.0, 1.0) for _ in range(K))


def parse_interval(text: str) -> Interval:
    """Parse ``lo:hi``, optionally bracketed as ``[lo:hi)``, ``(lo:hi]`` etc."""
    s = text.strip()
    lo_open = s.startswith("(")
    hi_open = s.endswith(")")
    s = s.lstrip("[(").rstrip("])")
    try:
        lo, hi = (float(v) for v in s.split(":"))
    except ValueError:
        raise ValidationError(f"bad interval {text!r}; expected lo:hi") from None
    if lo > hi:
        raise ValidationError(f"empty interval {text!r}")
    return Interval(lo, hi, lo_open, hi_open)


@dataclass(frozen=True, eq=False)
class SectorGrid:
    sizes: FiniteSizes
    values: tuple

    @classmethod
    def build(cls, sizes: FiniteSizes):
        vals = tuple(-1.0 + 2.0 * np.arange(n + 1) / n for n in sizes.sizes)
        return cls(sizes, vals)

    @property
    def shape(self):
        return tuple(len(v) for v in self.values)

    @property
    def total_cells(self) -> int:
        return math.prod(self.shape)

    def axis(self, l):
        shp = [1] * len(self.values)
        shp[l] = -1
        return self.values[l].reshape(shp)


@dataclass(frozen=True, eq=False)
class SectorLaw:
    grid: SectorGrid
    log_weights: np.ndarray
    log_Z: float
    t: np.ndarray
    box: tuple = None

    @property
    def sizes(self) -> FiniteSizes:
        return self.grid.sizes

    @property
    def N(self) -> int:
        return self.grid.sizes.N

    def probabilities(self):
        return np.exp(self.log_weights - self.log_Z)

    def rows(self):
        """(cells x K array of magnetizations, probabilities) for nonzero cells."""
        p = self.probabilities()
        keep = p > 0.0
        mesh = np.meshgrid(*self.grid.values, indexing="ij")
        X = np.stack([m[keep] for m in mesh], axis=-1)
        return X, p[keep]


def _resolve_threads(threads):
    if threads is None:
        env = os.environ.get("MCW_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def sector_law(spec: ModelSpec, N: int, t=None, *, sizes: FiniteSizes | None = None,
               budget: int = DEFAULT_BUDGET, threads: int | None = None) -> SectorLaw:
    """Exact law of the magnetization vector, optionally tilted by sqrt(N)(t, sqrt(alpha_N) m)."""
    if not spec.is_ising:
        raise ValidationError("exact enumeration needs the Ising prior")
    sizes = sizes or finite_sizes(spec, N)
    K = spec.K
    t = np.zeros(K) if t is None else np.asarray(t, dtype=float).reshape(-1)
    if t.shape != (K,):
        raise ValidationError(f"tilt must have K={K} entries")
    grid = SectorGrid.build(sizes)
    if grid.total_cells > budget:
        raise BudgetExceeded(
            f"{grid.total_cells} sectors exceed the enumeration budget {budget}; use the sampler"
        )
    Nn = float(sizes.N)
    delta_N, h_N = build_delta(spec, sizes.alpha_N)
    tilt = math.sqrt(Nn) * t * np.sqrt(sizes.alpha_N)

    singles = []
    for l, n in enumerate(sizes.sizes):
        x = grid.values[l]
        singles.append(_log_counts(n) + Nn * (h_N[l] * x + 0.5 * delta_N[l, l] * x * x) + tilt[l] * x)

    shape = grid.shape
    out = np.empty(shape)
    rest = math.prod(shape[1:])
    step = max(1, CHUNK_CELLS // max(rest, 1))
    chunks = [(i, min(i + step, shape[0])) for i in range(0, shape[0], step)]

    def fill(bounds):
        i0, i1 = bounds
        vals = [v.copy() for v in grid.values]
        vals[0] = vals[0][i0:i1]
        block = singles[0][i0:i1].reshape((-1,) + (1,) * (K - 1))
        for l in range(1, K):
            block = block + singles[l].reshape([-1 if j == l else 1 for j in range(K)])
        for p in range(K):
            for q in range(p + 1, K):
                if delta_N[p, q] == 0.0:
                    continue
                xp = vals[p].reshape([-1 if j == p else 1 for j in range(K)])
                xq = vals[q].reshape([-1 if j == q else 1 for j in range(K)])
                block = block + (Nn * delta_N[p, q]) * (xp * xq)
        out[i0:i1] = block
        return float(logsumexp(block))

    n_threads = _resolve_threads(threads)
    if n_threads == 1 or len(chunks) == 1:
        partial = [fill(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            partial = list(pool.map(fill, chunks))
    log_Z = float(logsumexp(partial))
    out.setflags(write=False)
    t = t.copy()
    t.setflags(write=False)
    return SectorLaw(grid=grid, log_weights=out, log_Z=log_Z, t=t, box=full_box(K))


def exact_log_pressure(spec: ModelSpec, N: int, **kw) -> float:
    """log Z_N / N under the counting measure."""
    law = sector_law(spec, N, **kw)
    return law.log_Z / law.N


# --------------------------------------------------------------------------
# moments and conditioning
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LawMoments:
    mean: np.ndarray
    cov: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    law: SectorLaw = field(repr=False)

    @property
    def rescaled_mean(self):
        """Mean of sqrt(N) sqrt(alpha_N) (m - center)."""
        return self.scale * (self.mean - self.center)

    @property
    def rescaled_cov(self):
        return self.cov * np.outer(self.scale, self.scale)

    def log_mgf(self, t):
        """log E exp((t, sqrt(N) sqrt(alpha_N) (m - center))), by reweighting."""
        t = np.asarray(t, dtype=float)
        g = self.law.grid
        shift = sum((t[l] * self.scale[l]) * (g.axis(l) - self.center[l]) for l in range(len(t)))
        return float(logsumexp(self.law.log_weights + shift) - self.law.log_Z)

    def mgf(self, t):
        return math.exp(self.log_mgf(t))


def moments(law: SectorLaw, center=None) -> LawMoments:
    grid = law.grid
    K = len(grid.values)
    center = np.zeros(K) if center is None else np.asarray(center, dtype=float)
    p = law.probabilities()
    axes = tuple(range(K))
    mean = np.empty(K)
    for l in range(K):
        marg = p.sum(axis=tuple(a for a in axes if a != l))
        mean[l] = math.fsum(marg * grid.values[l])
    cov = np.empty((K, K))
    for a in range(K):
        da = grid.values[a] - mean[a]
        marg = p.sum(axis=tuple(j for j in axes if j != a))
        cov[a, a] = math.fsum(marg * da * da)
        for b in range(a + 1, K):
            db = grid.values[b] - mean[b]
            m2 = p.sum(axis=tuple(j for j in axes if j not in (a, b)))
            cov[a, b] = cov[b, a] = math.fsum((m2 * np.outer(da, db)).ravel())
    scale = np.sqrt(law.N * np.asarray(law.sizes.alpha_N))
    return LawMoments(mean=mean, cov=cov, center=center, scale=scale, law=law)


def _box_masks(grid: SectorGrid, box):
    return [iv.contains(v) for iv, v in zip(box, grid.values)]


def conditional_law(law: SectorLaw, box) -> SectorLaw:
    """Restrict to cells inside ``box`` and renormalize; log_Z becomes log Z restricted to the box."""
    K = len(law.grid.values)
    box = as_box(box, K)
    masks = _box_masks(law.grid, box)
    if not all(m.any() for m in masks):
        raise ValidationError("box contains no sector of the grid")
    sel = np.ix_(*masks)
    lw = np.full(law.log_weights.shape, -np.inf)
    lw[sel] = law.log_weights[sel]
    log_Z = float(logsumexp(lw[sel]))
    if not np.isfinite(log_Z):
        raise ValidationError("box carries zero probability")
    lw.setflags(write=False)
    merged = tuple(a.intersect(b) for a, b in zip(law.box or full_box(K), box))
    return SectorLaw(grid=law.grid, log_weights=lw, log_Z=log_Z, t=law.t, box=merged)


def box_mass(law: SectorLaw, box) -> float:
    masks = _box_masks(law.grid, as_box(box, len(law.grid.values)))
    if not all(m.any() for m in masks):
        return 0.0
    sel = np.ix_(*masks)
    return float(np.exp(logsumexp(law.log_weights[sel]) - law.log_Z))


# --------------------------------------------------------------------------
# asymptotics and bounds
# --------------------------------------------------------------------------


def tilt_linear(sizes: FiniteSizes, t):
    """Linear term sqrt(alpha_N) t / sqrt(N) of the tilted finite-N free energy."""
    return np.sqrt(sizes.alpha_N) * np.asarray(t, dtype=float) / math.sqrt(sizes.N)


@dataclass(frozen=True, eq=False)
class LaplaceEstimate:
    log_Z_estimate: float
    mu_Nt: np.ndarray
    hess: np.ndarray
    f_max: float
    error_order_note: str


def tilted_maximizer(spec: ModelSpec, sizes: FiniteSizes, t=None):
    """Unique nondegenerate maximizer of the (tilted) finite-N free energy."""
    t = np.zeros(spec.K) if t is None else np.asarray(t, dtype=float)
    b = tilt_linear(sizes, t)
    mset = global_maximizers(spec, alpha=sizes.alpha_N, linear=b)
    return mset.unique(), FreeEnergy.from_spec(spec, sizes.alpha_N, b)


def laplace_log_Z(spec: ModelSpec, N: int, t=None, sizes: FiniteSizes | None = None) -> LaplaceEstimate:
    """Leading-order Laplace estimate of log Z_{N,t}.

    log Z ~ N f_{N,t}(mu) - 1/2 log[det(-H) prod(1 - mu_l^2)] + 1/2 sum_l log(N_l / N)

    The last term is the Jacobian between the per-species sector spacing 2/N_l and
    the common scale N in exp(N f); it vanishes for K = 1.
    """
    sizes = sizes or finite_sizes(spec, N)
    point, fe = tilted_maximizer(spec, sizes, t)
    mu = np.asarray(point.x)
    H = point.hessian
    sign, logdet = np.linalg.slogdet(-H)
    if sign <= 0:
        raise NumericalError("Hessian at the maximizer is not negative definite")
    est = (
        sizes.N * point.f_value
        - 0.5 * (logdet + float(np.sum(np.log1p(-mu * mu))))
        + 0.5 * float(np.sum(np.log(sizes.alpha_N)))
    )
    K = spec.K
    note = f"relative error O(N^(-1/2 + {K + 2}*delta)) for delta in (0, 1/{2 * K + 4})"
    return LaplaceEstimate(log_Z_estimate=float(est), mu_Nt=mu, hess=H, f_max=point.f_value,
                           error_order_note=note)


def poly_interval(mu, sizes: FiniteSizes, delta: float):
    """Open box |x_l - mu_l| < N_l**(-1/2 + delta)."""
    w = np.asarray(sizes.sizes, dtype=float) ** (-0.5 + delta)
    return tuple(Interval(m - r, m + r, True, True) for m, r in zip(mu, w))


def concentration_probe(spec: ModelSpec, N: int, t=None, delta: float = 0.2,
                        law: SectorLaw | None = None) -> float:
    """Exact Gibbs mass outside the poly-interval around the tilted maximizer."""
    sizes = law.sizes if law is not None else finite_sizes(spec, N)
    law = law or sector_law(spec, N, t, sizes=sizes)
    point, _ = tilted_maximizer(spec, sizes, law.t)
    box = poly_interval(point.x, sizes, delta)
    masks = _box_masks(law.grid, box)
    inside = np.ones(law.grid.shape, dtype=bool)
    for l, m in enumerate(masks):
        inside &= m.reshape([-1 if j == l else 1 for j in range(len(masks))])
    out = law.log_weights[~inside]
    if out.size == 0:
        return 0.0
    return float(np.exp(logsumexp(out) - law.log_Z))


def pressure_bracket(spec: ModelSpec, sizes: FiniteSizes):
    """Bounds (lower, upper) on p_N - max f_N from the sector-count inequalities.

    The lower bound carries K log C because each species contributes one factor C.
    """
    n = np.asarray(sizes.sizes, dtype=float)
    log_c = stirling_constant()
    lower = -(spec.K * log_c + 0.5 * np.log(n).sum()) / sizes.N
    upper = np.log(n + 1.0).sum() / sizes.N
    return float(lower), float(upper)
