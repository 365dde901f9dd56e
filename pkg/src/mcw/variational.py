"""Limiting pressure for an arbitrary prior via the inf-sup of p_var.

    p_var(x) = -1/2 (x, Delta x) + sum_p alpha_p log E_rho[exp(sigma * (J alpha x + h)_p)]

The inf runs over rotated coordinates along negative eigenvectors of Delta, the sup
over the positive ones; null directions leave p_var unchanged and are pinned at 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp
from scipy.stats import qmc

from .errors import DomainError, NoSaddleFound
from .model import ZERO_TOL, Ising, ModelSpec, build_delta, spectral_split

log = logging.getLogger(__name__)

LOG2 = np.log(2.0)


def _atoms(prior):
    return np.asarray(prior.values, dtype=float), np.log(np.asarray(prior.weights, dtype=float))


def log_mgf(prior, c):
    """log of int exp(sigma c) d rho(sigma), overflow-safe."""
    c = np.asarray(c, dtype=float)
    if isinstance(prior, Ising):
        a = np.abs(c)
        out = a + np.log1p(np.exp(-2.0 * a)) - LOG2
    else:
        v, lw = _atoms(prior)
        out = logsumexp(lw + c[..., None] * v, axis=-1)
    return float(out) if out.ndim == 0 else out


def _tilted_weights(prior, c):
    v, lw = _atoms(prior)
    e = lw + c[..., None] * v
    return v, np.exp(e - logsumexp(e, axis=-1, keepdims=True))


def mean_fn(prior, c):
    """Mean of sigma under the exponentially tilted prior (d/dc of log_mgf)."""
    c = np.asarray(c, dtype=float)
    if isinstance(prior, Ising):
        out = np.tanh(c)
    else:
        v, p = _tilted_weights(prior, c)
        out = p @ v
    return float(out) if out.ndim == 0 else out


def var_fn(prior, c):
    c = np.asarray(c, dtype=float)
    if isinstance(prior, Ising):
        out = 1.0 - np.tanh(c) ** 2
    else:
        v, p = _tilted_weights(prior, c)
        m = p @ v
        out = np.maximum(p @ (v * v) - m * m, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class PVar:
    """p_var and its derivatives in the original coordinates (batched on leading axes)."""

    spec: ModelSpec

    @property
    def delta(self):
        return build_delta(self.spec)[0]

    @property
    def coupling(self):
        return self.spec.J * self.spec.alpha[None, :]

    def fields(self, x):
        return self.spec.h + np.asarray(x, dtype=float) @ self.coupling.T

    def value(self, x):
        x = np.asarray(x, dtype=float)
        quad = -0.5 * np.einsum("...i,ij,...j->...", x, self.delta, x)
        return quad + log_mgf(self.spec.prior, self.fields(x)) @ self.spec.alpha

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        a = self.spec.alpha
        psi = mean_fn(self.spec.prior, self.fields(x))
        return -x @ self.delta + a * ((a * psi) @ self.spec.J)

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        a = self.spec.alpha
        d = a * var_fn(self.spec.prior, self.fields(x))
        AJ = a[:, None] * self.spec.J
        # A J diag(d) J A
        inner = np.einsum("ip,...p,pj->...ij", AJ, d, AJ.T)
        return inner - self.delta


def p_var(spec: ModelSpec, x) -> float:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("p_var needs a finite argument")
    return float(PVar(spec).value(x))


def grad_p_var(spec: ModelSpec, x):
    return PVar(spec).grad(np.asarray(x, dtype=float))


# --------------------------------------------------------------------------
# inf-sup solver
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SaddleResult:
    value: float
    z_star: np.ndarray
    x_star: np.ndarray
    grad_norm: float
    converged: bool
    multistart_spread: float
    a: int
    candidates: list = field(default_factory=list)

    def to_dict(self):
        return {
            "value": self.value,
            "z_star": self.z_star.tolist(),
            "x_star": self.x_star.tolist(),
            "grad_norm": self.grad_norm,
            "converged": self.converged,
            "multistart_spread": self.multistart_spread,
            "a": self.a,
            "candidates": self.candidates,
        }


@dataclass
class InfSupOptions:
    tol: float = 1e-9
    zero_tol: float = ZERO_TOL
    grid_step: float = 0.25
    box: float = 1.5
    max_seeds: int = 20_000
    inertia_tol: float = 1e-9
    max_widen: int = 2
    rotate: bool = True
    seed: int = 0


class _Reduced:
    """p_var restricted to the non-null rotated coordinates w: x = B w."""

    def __init__(self, pv: PVar, B, inf_mask):
        self.pv = pv
        self.B = B
        self.inf = inf_mask
        self.sup = ~inf_mask

    def x(self, W):
        return W @ self.B.T

    def value(self, W):
        return self.pv.value(self.x(W))

    def grad(self, W):
        return self.pv.grad(self.x(W)) @ self.B

    def hessian(self, W):
        H = self.pv.hessian(self.x(W))
        return np.einsum("ki,...kl,lj->...ij", self.B, H, self.B)


def _grid(d, step, box, max_seeds, seed):
    n = int(round(2 * box / step)) + 1
    if n ** d <= max_seeds:
        axis = np.linspace(-box, box, n)
        return np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return qmc.scale(qmc.LatinHypercube(d=d, seed=seed).random(max_seeds), -box, box)


def _newton_roots(grad, hess, W, tol, max_iter=100, max_step=1.0):
    W = np.array(W, dtype=float)
    active = np.ones(len(W), dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        Wa = W[active]
        g = grad(Wa)
        H = hess(Wa)
        try:
            step = -np.linalg.solve(H, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.stack([-np.linalg.lstsq(Hi, gi, rcond=None)[0] for Hi, gi in zip(H, g)])
        step = np.where(np.isfinite(step), step, 0.0)
        norm = np.linalg.norm(step, axis=-1, keepdims=True)
        step *= np.minimum(1.0, max_step / np.maximum(norm, 1e-300))
        W[active] = Wa + step
        idx = np.flatnonzero(active)
        small = norm[:, 0] <= 1e-14 * (1.0 + np.linalg.norm(Wa, axis=-1))
        active[idx[small]] = False
    ok = np.linalg.norm(grad(W), axis=-1) <= tol
    return W, ok


def _dedup(points, tol=1e-7):
    reps = []
    for w in points:
        if not any(np.max(np.abs(w - r)) <= tol for r in reps):
            reps.append(w)
    return reps


def _inner_sup(red: _Reduced, w_inf, opts: InfSupOptions):
    """Global sup over the sup-block coordinates with the inf block frozen."""
    d_sup = int(red.sup.sum())
    if d_sup == 0:
        w = np.array(w_inf, dtype=float)
        return float(red.value(w)), w

    def embed(S):
        W = np.empty(S.shape[:-1] + (red.inf.size,))
        W[..., red.inf] = w_inf
        W[..., red.sup] = S
        return W

    def grad(S):
        return red.grad(embed(S))[..., red.sup]

    def hess(S):
        return red.hessian(embed(S))[..., red.sup, :][..., :, red.sup]

    seeds = _grid(d_sup, opts.grid_step, opts.box, opts.max_seeds, opts.seed)
    S, ok = _newton_roots(grad, hess, seeds, opts.tol)
    best_val, best_w = -np.inf, None
    for s in S[ok]:
        H = red.hessian(embed(s))[np.ix_(red.sup, red.sup)]
        if np.max(np.linalg.eigvalsh(H)) > opts.inertia_tol:
            continue
        v = float(red.value(embed(s)))
        if v > best_val:
            best_val, best_w = v, embed(s)
    if best_w is None:
        # fall back to a plain ascent from the best seed
        vals = red.value(embed(seeds))
        s0 = seeds[int(np.argmax(vals))]
        res = minimize(lambda s: -red.value(embed(s)), s0, jac=lambda s: -grad(s), method="BFGS",
                       options={"gtol": opts.tol})
        best_val, best_w = -float(res.fun), embed(res.x)
    return best_val, best_w


def infsup_solve(spec: ModelSpec, opts: InfSupOptions | None = None, **kw) -> SaddleResult:
    """inf over negative-curvature rotated coordinates, sup over the positive ones.

    Multi-start Newton on the gradient locates stationary points; those whose
    Hessian has the right inertia (PSD on the inf block, NSD on the sup block) and
    whose sup block is a global inner sup are candidate values, and the smallest
    is returned. When a = 0 this is a plain maximization, when a = K a plain
    minimization.
    """
    opts = opts or InfSupOptions(**kw)
    pv = PVar(spec)
    split = spectral_split(pv.delta, opts.zero_tol)
    K = spec.K
    if opts.rotate:
        O = np.asarray(split.O)
        inf_idx, sup_idx = split.inf_index, split.sup_index
    else:
        if split.a not in (0, K) or (split.a == K and split.null_index.size):
            raise DomainError("unrotated solve needs a definite Delta")
        O = np.eye(K)
        idx = np.arange(K)
        inf_idx, sup_idx = (idx, idx[:0]) if split.a == K else (idx[:0], idx)
    active = np.concatenate([inf_idx, sup_idx])
    B = O[:, active]
    inf_mask = np.zeros(active.size, dtype=bool)
    inf_mask[: inf_idx.size] = True
    red = _Reduced(pv, B, inf_mask)
    d = active.size

    def to_result(w, converged, spread, cands):
        z = np.zeros(K)
        z[active] = w
        x = O @ z
        return SaddleResult(
            value=float(pv.value(x)),
            z_star=z,
            x_star=x,
            grad_norm=float(np.linalg.norm(pv.grad(x))),
            converged=converged,
            multistart_spread=spread,
            a=split.a,
            candidates=cands,
        )

    if d == 0:
        return to_result(np.zeros(0), True, 0.0, [])

    box = opts.box
    stationary = []
    for _ in range(opts.max_widen + 1):
        seeds = _grid(d, opts.grid_step, box, opts.max_seeds, opts.seed)
        W, ok = _newton_roots(red.grad, red.hessian, seeds, opts.tol)
        stationary = _dedup(W[ok])
        good = []
        for w in stationary:
            H = red.hessian(w)
            lo = np.linalg.eigvalsh(H[np.ix_(red.inf, red.inf)]) if red.inf.any() else np.zeros(1)
            hi = np.linalg.eigvalsh(H[np.ix_(red.sup, red.sup)]) if red.sup.any() else np.zeros(1)
            if lo.min() >= -opts.inertia_tol and hi.max() <= opts.inertia_tol:
                good.append(w)
        on_edge = any(np.max(np.abs(w)) >= box - 1e-9 for w in good)
        if good and not on_edge:
            break
        box *= 2.0
    else:
        if not good:
            raise NoSaddleFound(
                "no stationary point of p_var with the required inertia",
                candidates=[(O[:, active] @ w).tolist() for w in stationary],
            )

    values = [float(red.value(w)) for w in good]
    spread = max(values) - min(values)
    cands = []
    certified = []
    for w, v in zip(good, values):
        phi, _ = _inner_sup(red, w[red.inf], opts)
        ok = v >= phi - opts.tol * (1.0 + abs(phi))
        cands.append({"x": (B @ w).tolist(), "value": v, "inner_sup": phi, "certified": bool(ok)})
        if ok:
            certified.append((v, w))
    if spread > 1e-6:
        log.info("inf-sup: %d inertia-correct saddles, value spread %.3g", len(good), spread)

    if certified:
        v, w = min(certified, key=lambda t: t[0])
        return to_result(w, True, spread, cands)

    # the inner sup switches branch at the minimizer: minimize phi directly
    def phi(w_inf):
        return _inner_sup(red, w_inf, opts)[0]

    best = None
    for w in good:
        res = minimize(phi, w[red.inf], method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 4000})
        if best is None or res.fun < best.fun:
            best = res
    _, w = _inner_sup(red, best.x, opts)
    return to_result(w, False, spread, cands)


def pressure_prior(spec: ModelSpec, **kw) -> float:
    """Limiting pressure under the prior-measure convention."""
    return infsup_solve(spec, **kw).value
