"""Ising free-energy landscape.

    f(x) = 1/2 (x, Delta x) + (h_tilde, x) - sum_p alpha_p I(x_p) + (b, x)

``b`` is an optional extra linear term (zero for f itself, sqrt(alpha_N) t / sqrt(N)
for the tilted finite-N functional). Stationary points solve
x = tanh(h + J alpha x + b / alpha); all of them are located from a seed grid by a
batched fixed-point sweep and a batched Newton sweep, then polished and deduplicated.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy
from scipy.stats import qmc

from .errors import DegenerateMaximizer, DomainError, NumericalError
from .model import ModelSpec

EDGE = 1.0 - 1e-15
EIG_TOL = 1e-9
GRAD_TOL = 1e-10
DEDUP_TOL = 1e-7


def binary_entropy(x):
    """I(x) = (1-x)/2 log((1-x)/2) + (1+x)/2 log((1+x)/2), with I(+-1) = 0."""
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0):
        raise DomainError("binary_entropy needs |x| <= 1")
    p = 0.5 * (1.0 + x)
    q = 0.5 * (1.0 - x)
    out = xlogy(q, q) + xlogy(p, p)
    return float(out) if out.ndim == 0 else out


def safe_arctanh(x):
    return np.arctanh(np.clip(x, -EDGE, EDGE))


@dataclass(frozen=True, eq=False)
class FreeEnergy:
    J: np.ndarray
    h: np.ndarray
    alpha: np.ndarray
    linear: np.ndarray

    @classmethod
    def from_spec(cls, spec: ModelSpec, alpha=None, linear=None):
        a = spec.alpha if alpha is None else np.asarray(alpha, dtype=float)
        b = np.zeros(spec.K) if linear is None else np.asarray(linear, dtype=float)
        return cls(spec.J, spec.h, a, b)

    @property
    def K(self):
        return self.J.shape[0]

    @property
    def delta(self):
        return self.alpha[:, None] * self.J * self.alpha[None, :]

    @property
    def field(self):
        """Effective field h + b/alpha of the tanh map."""
        return self.h + self.linear / self.alpha

    def value(self, x):
        x = np.asarray(x, dtype=float)
        quad = 0.5 * np.einsum("...i,ij,...j->...", x, self.delta, x)
        lin = x @ (self.alpha * self.h + self.linear)
        return quad + lin - binary_entropy(x) @ self.alpha

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.delta + self.alpha * self.h + self.linear - self.alpha * safe_arctanh(x)

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        x2 = np.clip(x * x, 0.0, EDGE)
        diag = self.alpha / (1.0 - x2)
        H = np.broadcast_to(self.delta, x.shape[:-1] + self.delta.shape).copy()
        idx = np.arange(self.K)
        H[..., idx, idx] -= diag
        return H

    def tanh_map(self, x):
        return np.tanh(self.field + x @ (self.J * self.alpha[None, :]).T)


def f_eval(spec: ModelSpec, x, alpha=None, linear=None):
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0):
        raise DomainError("f is defined on [-1, 1]^K")
    return float(FreeEnergy.from_spec(spec, alpha, linear).value(x))


def _check_interior(x):
    if np.any(np.abs(x) >= 1.0):
        raise DomainError("derivatives of f need x strictly inside (-1, 1)^K")


def grad_f(spec: ModelSpec, x, alpha=None, linear=None):
    x = np.asarray(x, dtype=float)
    _check_interior(x)
    return FreeEnergy.from_spec(spec, alpha, linear).grad(x)


def hessian_f(spec: ModelSpec, x, alpha=None, linear=None):
    """Symmetric Hessian Delta - diag(alpha_l / (1 - x_l^2))."""
    x = np.asarray(x, dtype=float)
    _check_interior(x)
    return FreeEnergy.from_spec(spec, alpha, linear).hessian(x)


# --------------------------------------------------------------------------
# stationary points
# --------------------------------------------------------------------------


class Kind(str, enum.Enum):
    MAXIMUM = "Maximum"
    SADDLE = "Saddle"
    MINIMUM = "Minimum"


@dataclass(frozen=True, eq=False)
class StationaryPoint:
    x: np.ndarray
    f_value: float
    grad_norm: float
    hessian: np.ndarray
    hess_eigs: np.ndarray
    kind: Kind
    basin_seed_count: int = 1

    @property
    def degenerate(self) -> bool:
        return bool(np.any(np.abs(self.hess_eigs) <= EIG_TOL))

    @property
    def min_hess_eig(self) -> float:
        return float(self.hess_eigs.min())

    def to_dict(self):
        return {
            "x": self.x.tolist(),
            "f": self.f_value,
            "grad_norm": self.grad_norm,
            "hess_eigs": self.hess_eigs.tolist(),
            "kind": self.kind.value,
            "basin_seed_count": self.basin_seed_count,
        }


def classify(eigs) -> Kind:
    if np.all(eigs < -EIG_TOL):
        return Kind.MAXIMUM
    if np.all(eigs > EIG_TOL):
        return Kind.MINIMUM
    return Kind.SADDLE


def _make_point(fe: FreeEnergy, x, seeds=1) -> StationaryPoint:
    H = fe.hessian(x)
    eigs = np.linalg.eigvalsh(H)
    x = np.array(x, dtype=float)
    x.setflags(write=False)
    return StationaryPoint(
        x=x,
        f_value=float(fe.value(x)),
        grad_norm=float(np.linalg.norm(fe.grad(x))),
        hessian=H,
        hess_eigs=eigs,
        kind=classify(eigs),
        basin_seed_count=int(seeds),
    )


def _fraction_to_boundary(X, step):
    # largest s <= 1 keeping |X + s*step| below 1 with a margin
    with np.errstate(divide="ignore", invalid="ignore"):
        room = np.where(step > 0, (1.0 - X) / step, np.where(step < 0, (-1.0 - X) / step, np.inf))
    s = np.min(0.95 * room, axis=-1)
    return np.minimum(1.0, s)[..., None]


def _newton_batch(fe: FreeEnergy, X, max_iter=100, step_tol=1e-14):
    """Batched Newton on grad f; returns final points and a validity mask."""
    X = np.array(X, dtype=float)
    active = np.ones(X.shape[0], dtype=bool)
    gprev = np.full(X.shape[0], np.inf)
    for _ in range(max_iter):
        if not active.any():
            break
        Xa = X[active]
        g = fe.grad(Xa)
        H = fe.hessian(Xa)
        try:
            step = -np.linalg.solve(H, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.zeros_like(g)
            for i in range(len(Xa)):
                step[i] = -np.linalg.lstsq(H[i], g[i], rcond=None)[0]
        step = np.where(np.isfinite(step), step, 0.0)
        Xa = Xa + _fraction_to_boundary(Xa, step) * step
        X[active] = Xa
        small = np.max(np.abs(step), axis=-1) <= step_tol
        gn = np.linalg.norm(fe.grad(Xa), axis=-1)
        idx = np.flatnonzero(active)
        # stagnation below the tolerance: rounding floor reached (degenerate roots)
        stalled = (gn >= gprev[idx]) & (gn <= GRAD_TOL)
        done = small | (gn == 0.0) | stalled
        gprev[idx] = gn
        active[idx[done]] = False
    g = np.linalg.norm(fe.grad(X), axis=-1)
    ok = (g <= GRAD_TOL) & np.all(np.abs(X) < 1.0, axis=-1)
    return X, ok


def _fixed_point_batch(fe: FreeEnergy, X, damping, tol=1e-13, max_iter=100_000):
    X = np.array(X, dtype=float)
    active = np.ones(X.shape[0], dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        Xa = X[active]
        new = (1.0 - damping) * Xa + damping * fe.tanh_map(Xa)
        delta = np.max(np.abs(new - Xa), axis=-1)
        X[active] = new
        idx = np.flatnonzero(active)
        active[idx[delta <= tol]] = False
    return X, ~active


def _polish(fe: FreeEnergy, x):
    X, ok = _newton_batch(fe, np.asarray(x, dtype=float)[None, :], max_iter=200, step_tol=1e-15)
    return X[0], bool(ok[0])


def fixed_point_iterate(spec: ModelSpec, x0, damping: float = 1.0, alpha=None, linear=None,
                        tol: float = 1e-13, max_iter: int = 100_000):
    """Damped iteration x <- (1-d) x + d tanh(h + J alpha x), Newton-polished.

    Returns a validated ``StationaryPoint`` or ``None`` when the iteration does not
    settle (callers typically retry with smaller damping).
    """
    if not 0.0 < damping <= 1.0:
        raise DomainError("damping must lie in (0, 1]")
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    if np.any(np.abs(x0) > 1.0):
        raise DomainError("x0 must lie in [-1, 1]^K")
    fe = FreeEnergy.from_spec(spec, alpha, linear)
    X, conv = _fixed_point_batch(fe, x0, damping, tol=tol, max_iter=max_iter)
    if not conv[0]:
        return None
    x, ok = _polish(fe, X[0])
    if not ok:
        return None
    return _make_point(fe, x)


def _seed_grid(K, grid_density, max_seeds, seed):
    if grid_density ** K <= max_seeds:
        axis = np.linspace(-0.99, 0.99, grid_density)
        grid = np.stack(np.meshgrid(*([axis] * K), indexing="ij"), axis=-1).reshape(-1, K)
    else:
        grid = qmc.scale(qmc.LatinHypercube(d=K, seed=seed).random(max_seeds), -0.99, 0.99)
    corners = np.stack(np.meshgrid(*([[-0.999, 0.999]] * K), indexing="ij"), axis=-1).reshape(-1, K)
    return np.vstack([grid, corners])


def _dedup(fe, points, counts):
    reps, tallies = [], []
    for x, c in zip(points, counts):
        for i, r in enumerate(reps):
            if np.max(np.abs(r - x)) <= DEDUP_TOL:
                tallies[i] += c
                if np.linalg.norm(fe.grad(x)) < np.linalg.norm(fe.grad(r)):
                    reps[i] = x
                break
        else:
            reps.append(x)
            tallies.append(c)
    return reps, tallies


def stationary_points(fe: FreeEnergy, grid_density=7, max_seeds=100_000, seed=0):
    if grid_density < 2:
        raise DomainError("grid_density must be >= 2")
    seeds = _seed_grid(fe.K, grid_density, max_seeds, seed)
    fp, fp_ok = _fixed_point_batch(fe, seeds, damping=0.5, max_iter=5_000)
    nt, nt_ok = _newton_batch(fe, seeds)
    cand = np.vstack([fp[fp_ok], nt[nt_ok]])
    polished = []
    for x in cand:
        x, ok = _polish(fe, x)
        if ok and np.max(np.abs(x - fe.tanh_map(x))) <= 1e-9:
            polished.append(x)
    reps, tallies = _dedup(fe, polished, [1] * len(polished))
    pts = [_make_point(fe, x, c) for x, c in zip(reps, tallies)]
    pts.sort(key=lambda p: (-p.f_value, tuple(p.x)))
    return pts


def find_all_stationary(spec: ModelSpec, grid_density: int = 7, alpha=None, linear=None,
                        max_seeds: int = 100_000, seed: int = 0):
    """All stationary points of f reachable from a ``grid_density**K`` seed grid.

    Sorted by decreasing f. Beyond ``max_seeds`` grid points, Latin-hypercube seeds
    are used instead.
    """
    fe = FreeEnergy.from_spec(spec, alpha, linear)
    pts = stationary_points(fe, grid_density, max_seeds, seed)
    if not pts:
        raise NumericalError("no stationary point located; f always has an interior maximum")
    return pts


@dataclass(frozen=True, eq=False)
class MaximizerSet:
    points: list
    f_max: float
    degenerate: bool
    stationary: list = field(default_factory=list)

    @property
    def n(self):
        return len(self.points)

    def require_nondegenerate(self):
        if self.degenerate:
            raise DegenerateMaximizer(
                "global maximizer has a (near-)zero Hessian eigenvalue; the Gaussian limit laws do not apply"
            )
        return self

    def unique(self) -> StationaryPoint:
        self.require_nondegenerate()
        if self.n != 1:
            raise NumericalError(f"expected a unique global maximizer, found {self.n}")
        return self.points[0]


def global_maximizers(spec: ModelSpec, tie_tol: float = 1e-9, grid_density: int = 7,
                      alpha=None, linear=None) -> MaximizerSet:
    pts = find_all_stationary(spec, grid_density, alpha=alpha, linear=linear)
    return maximizers_from(pts, tie_tol)


def maximizers_from(pts, tie_tol=1e-9) -> MaximizerSet:
    f_max = max(p.f_value for p in pts)
    top = [p for p in pts if p.f_value >= f_max - tie_tol and np.all(p.hess_eigs <= EIG_TOL)]
    if not top:
        raise NumericalError("highest stationary point is not a local maximum; seed grid too coarse")
    degenerate = any(np.any(p.hess_eigs > -EIG_TOL) for p in top)
    return MaximizerSet(points=top, f_max=f_max, degenerate=degenerate, stationary=list(pts))


def max_f(spec: ModelSpec, alpha=None, linear=None, grid_density=7) -> float:
    """max over [-1,1]^K of f (attained in the interior)."""
    pts = find_all_stationary(spec, grid_density, alpha=alpha, linear=linear)
    return max(p.f_value for p in pts)
