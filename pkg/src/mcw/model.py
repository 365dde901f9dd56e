"""Model definition for the multispecies Curie-Weiss system.

A model is a dense symmetric K x K coupling matrix ``J``, species fields ``h``,
a spin prior on [-1, 1], limiting species fractions ``alpha`` and an optional
finite-size perturbation ``alpha_N = alpha + N**-theta * beta``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericalError, ValidationError

SYMMETRY_TOL = 1e-12
NORMALIZATION_TOL = 1e-12
ZERO_TOL = 1e-10


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


# --------------------------------------------------------------------------
# priors
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Ising:
    """Uniform measure on {-1, +1}."""

    name = "ising"

    @property
    def values(self):
        return _frozen([-1.0, 1.0])

    @property
    def weights(self):
        return _frozen([0.5, 0.5])

    def to_dict(self):
        return {"type": "ising"}


def _check_atoms(values, weights):
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.ndim != 1 or values.shape != weights.shape or values.size == 0:
        raise ValidationError("prior needs matching non-empty 1-d values and weights")
    if not np.all(np.isfinite(values)) or np.any(np.abs(values) > 1.0):
        raise ValidationError("prior support must lie in [-1, 1]")
    if np.any(weights <= 0.0):
        raise ValidationError("prior weights must be positive")
    if abs(weights.sum() - 1.0) > NORMALIZATION_TOL:
        raise ValidationError(f"prior weights sum to {weights.sum()!r}, expected 1")
    return values, weights


@dataclass(frozen=True)
class DiscreteAtoms:
    """Finitely many atoms ``(value, weight)``."""

    points: tuple
    name = "atoms"

    def __post_init__(self):
        pts = tuple((float(v), float(w)) for v, w in self.points)
        _check_atoms([p[0] for p in pts], [p[1] for p in pts])
        object.__setattr__(self, "points", pts)

    @property
    def values(self):
        return _frozen([p[0] for p in self.points])

    @property
    def weights(self):
        return _frozen([p[1] for p in self.points])

    def to_dict(self):
        return {"type": "atoms", "points": [list(p) for p in self.points]}


@dataclass(frozen=True)
class QuadratureDensity:
    """Caller-supplied nodes/weights standing in for a continuous prior."""

    nodes: tuple
    node_weights: tuple
    name = "quadrature"

    def __post_init__(self):
        v, w = _check_atoms(self.nodes, self.node_weights)
        object.__setattr__(self, "nodes", tuple(v.tolist()))
        object.__setattr__(self, "node_weights", tuple(w.tolist()))

    @property
    def values(self):
        return _frozen(self.nodes)

    @property
    def weights(self):
        return _frozen(self.node_weights)

    def to_dict(self):
        return {"type": "quadrature", "nodes": list(self.nodes), "weights": list(self.node_weights)}


PriorSpec = Ising | DiscreteAtoms | QuadratureDensity


def prior_from_dict(d) -> PriorSpec:
    kind = d.get("type") if isinstance(d, dict) else None
    if kind == "ising":
        return Ising()
    if kind == "atoms":
        return DiscreteAtoms(tuple(tuple(p) for p in d["points"]))
    if kind == "quadrature":
        return QuadratureDensity(tuple(d["nodes"]), tuple(d["weights"]))
    raise ValidationError(f"unknown prior {d!r}")


# --------------------------------------------------------------------------
# model
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModelSpec:
    J: np.ndarray
    h: np.ndarray
    alpha: np.ndarray
    prior: PriorSpec = field(default_factory=Ising)
    beta: np.ndarray | None = None
    theta: float = 0.5

    def __post_init__(self):
        J = np.array(self.J, dtype=float)
        if J.ndim != 2 or J.shape[0] != J.shape[1] or J.shape[0] == 0:
            raise ValidationError(f"J must be a non-empty square matrix, got shape {J.shape}")
        K = J.shape[0]
        if not np.all(np.isfinite(J)):
            raise ValidationError("J has non-finite entries")
        asym = np.max(np.abs(J - J.T))
        if asym > SYMMETRY_TOL:
            raise ValidationError(f"J is not symmetric (max asymmetry {asym:.3g})")
        J = 0.5 * (J + J.T)

        h = np.array(self.h, dtype=float).reshape(-1)
        alpha = np.array(self.alpha, dtype=float).reshape(-1)
        beta = np.zeros(K) if self.beta is None else np.array(self.beta, dtype=float).reshape(-1)
        for name, v in (("h", h), ("alpha", alpha), ("beta", beta)):
            if v.shape != (K,):
                raise ValidationError(f"{name} must have length K={K}, got {v.shape[0]}")
            if not np.all(np.isfinite(v)):
                raise ValidationError(f"{name} has non-finite entries")
        if np.any(alpha <= 0.0):
            raise ValidationError("all alpha_p must be positive")
        if abs(alpha.sum() - 1.0) > NORMALIZATION_TOL:
            raise ValidationError(f"alpha sums to {alpha.sum()!r}, expected 1")
        theta = float(self.theta)
        if not theta >= 0.5:
            raise ValidationError(f"theta must be >= 1/2, got {theta}")
        if not isinstance(self.prior, (Ising, DiscreteAtoms, QuadratureDensity)):
            raise ValidationError(f"unsupported prior {self.prior!r}")

        object.__setattr__(self, "J", _frozen(J))
        object.__setattr__(self, "h", _frozen(h))
        object.__setattr__(self, "alpha", _frozen(alpha))
        object.__setattr__(self, "beta", _frozen(beta))
        object.__setattr__(self, "theta", theta)

    @property
    def K(self) -> int:
        return self.J.shape[0]

    @property
    def is_ising(self) -> bool:
        return isinstance(self.prior, Ising)

    def replace(self, **changes) -> "ModelSpec":
        kw = dict(J=self.J, h=self.h, alpha=self.alpha, prior=self.prior, beta=self.beta, theta=self.theta)
        kw.update(changes)
        return ModelSpec(**kw)

    def to_dict(self):
        return {
            "K": self.K,
            "J": self.J.tolist(),
            "h": self.h.tolist(),
            "prior": self.prior.to_dict(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "theta": self.theta,
        }


def model_from_dict(d) -> ModelSpec:
    if not isinstance(d, dict):
        raise ValidationError("model document must be a JSON object")
    missing = [k for k in ("K", "J", "h", "alpha") if k not in d]
    if missing:
        raise ValidationError(f"model is missing keys: {', '.join(missing)}")
    K = d["K"]
    if not isinstance(K, int) or K < 1:
        raise ValidationError(f"K must be a positive integer, got {K!r}")
    try:
        J = np.array(d["J"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"J is not a numeric matrix: {exc}") from None
    if J.shape != (K, K):
        raise ValidationError(f"J must be {K}x{K}, got shape {J.shape}")
    try:
        prior = prior_from_dict(d.get("prior", {"type": "ising"}))
        return ModelSpec(
            J=J,
            h=d["h"],
            alpha=d["alpha"],
            prior=prior,
            beta=d.get("beta"),
            theta=d.get("theta", 0.5),
        )
    except ValidationError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ValidationError(f"malformed model: {exc}") from None


def load_model(path) -> ModelSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return model_from_dict(doc)


# --------------------------------------------------------------------------
# coupling geometry
# --------------------------------------------------------------------------


def build_delta(spec: ModelSpec, alpha=None):
    """Return ``(Delta, h_tilde)`` with Delta = diag(a) J diag(a), h_tilde = a*h.

    ``alpha`` defaults to the limiting fractions; pass ``alpha_N`` for finite N.
    """
    a = spec.alpha if alpha is None else np.asarray(alpha, dtype=float)
    return a[:, None] * spec.J * a[None, :], a * spec.h


@dataclass(frozen=True, eq=False)
class SpectralSplit:
    delta: np.ndarray
    eigenvalues: np.ndarray
    a: int
    O: np.ndarray
    delta_plus: np.ndarray
    delta_minus: np.ndarray
    zero_tol: float = ZERO_TOL

    @property
    def inf_index(self):
        """Rotated coordinates carrying strictly negative curvature."""
        return np.flatnonzero(self.eigenvalues < -self.zero_tol)

    @property
    def sup_index(self):
        return np.flatnonzero(self.eigenvalues > self.zero_tol)

    @property
    def null_index(self):
        return np.flatnonzero(np.abs(self.eigenvalues) <= self.zero_tol)


def spectral_split(delta, zero_tol: float = ZERO_TOL) -> SpectralSplit:
    """Split symmetric ``delta`` into PSD and NSD parts sharing eigenvectors.

    Eigenvalues are ascending; the first ``a`` (those <= zero_tol) form the
    nonpositive block. Eigenvalues within ``zero_tol`` of 0 are zeroed in both parts.
    """
    delta = np.asarray(delta, dtype=float)
    try:
        lam, O = np.linalg.eigh(delta)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from None
    a = int(np.count_nonzero(lam <= zero_tol))
    clean = np.where(np.abs(lam) <= zero_tol, 0.0, lam)
    neg = np.minimum(clean, 0.0)
    neg[a:] = 0.0
    pos = np.maximum(clean, 0.0)
    pos[:a] = 0.0
    d_minus = (O * neg) @ O.T
    d_plus = (O * pos) @ O.T
    return SpectralSplit(
        delta=_frozen(delta),
        eigenvalues=_frozen(lam),
        a=a,
        O=_frozen(O),
        delta_plus=_frozen(0.5 * (d_plus + d_plus.T)),
        delta_minus=_frozen(0.5 * (d_minus + d_minus.T)),
        zero_tol=zero_tol,
    )


# --------------------------------------------------------------------------
# finite sizes
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FiniteSizes:
    """Species sizes at scale N.

    ``N`` is the scale entering N**-theta and the Hamiltonian prefactor. When the
    perturbation has sum(beta) == 0 the sizes add up to N; otherwise they are the
    individually rounded targets and ``total`` differs from ``N``.
    """

    N: int
    sizes: tuple
    alpha_N: np.ndarray

    @property
    def total(self) -> int:
        return int(sum(self.sizes))

    @property
    def K(self) -> int:
        return len(self.sizes)


def target_ratios(spec: ModelSpec, N: float):
    return spec.alpha + float(N) ** (-spec.theta) * spec.beta


def _largest_remainder(N, r):
    raw = N * r
    base = np.floor(raw).astype(int)
    short = N - int(base.sum())
    order = sorted(range(len(r)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    # every species needs at least one spin
    while np.any(base < 1):
        lo = int(np.argmin(base))
        hi = int(np.argmax(base))
        base[lo] += 1
        base[hi] -= 1
    return base


def finite_sizes(spec: ModelSpec, N: int) -> FiniteSizes:
    N = int(N)
    if N < spec.K:
        raise ValidationError(f"N={N} is smaller than K={spec.K}")
    r = target_ratios(spec, N)
    if np.any(r <= 0.0):
        raise ValidationError(f"perturbation too large for N={N}: target ratios {r.tolist()}")
    if abs(r.sum() - 1.0) <= NORMALIZATION_TOL:
        sizes = _largest_remainder(N, r)
    else:
        sizes = np.maximum(np.rint(N * r).astype(int), 1)
    sizes = tuple(int(s) for s in sizes)
    return FiniteSizes(N=N, sizes=sizes, alpha_N=_frozen(np.array(sizes, dtype=float) / N))


def hamiltonian_density(spec: ModelSpec, sizes: FiniteSizes, m) -> float:
    """-H_N / N as a function of the species magnetizations ``m``."""
    m = np.asarray(m, dtype=float)
    delta_N, h_N = build_delta(spec, sizes.alpha_N)
    return float(0.5 * m @ delta_N @ m + h_N @ m)


def species_labels(sizes: FiniteSizes):
    """Species index of every spin, in block order."""
    return np.repeat(np.arange(sizes.K), sizes.sizes)


def log2_counting_offset(sizes: FiniteSizes) -> float:
    """Per-N difference between counting-measure and prior-measure pressures."""
    return sizes.total * math.log(2.0) / sizes.N
