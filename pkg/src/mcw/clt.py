"""Predicted Gaussian fluctuations of the magnetization and their finite-N checks.

With H the Hessian of f at a nondegenerate maximizer mu,

    Sigma = sqrt(alpha) (-H)^{-1} sqrt(alpha)
    nu    = -sqrt(alpha) H^{-1} alpha J diag(mu) beta    (theta = 1/2, else 0)

are the covariance and mean of the limit of sqrt(N) sqrt(alpha_N) (m_N - mu).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMaximizer, NumericalError, ValidationError
from .exact import (
    DEFAULT_BUDGET,
    as_box,
    conditional_law,
    full_box,
    moments,
    sector_law,
    tilt_linear,
    tilted_maximizer,
)
from .landscape import FreeEnergy, Kind, MaximizerSet, StationaryPoint, global_maximizers
from .model import ModelSpec, finite_sizes, target_ratios

FACE_SAMPLES = 1000
BOUNDARY_MARGIN = 1e-9
SPD_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class CltParams:
    mu: np.ndarray
    nu: np.ndarray
    sigma: np.ndarray
    theta: float
    hessian: np.ndarray
    conditioned_box: tuple | None = None

    def predicted_log_mgf(self, t):
        t = np.asarray(t, dtype=float)
        return float(0.5 * t @ self.sigma @ t + self.nu @ t)

    def to_dict(self):
        return {
            "mu": self.mu.tolist(),
            "nu": self.nu.tolist(),
            "sigma": self.sigma.tolist(),
            "theta": self.theta,
            "hessian": self.hessian.tolist(),
            "conditioned_box": None if self.conditioned_box is None else [str(iv) for iv in self.conditioned_box],
        }


def mean_shift_direction(spec: ModelSpec, mu, H):
    """-H^{-1} alpha J diag(mu) beta: first-order coefficient of mu_N - mu in N^-theta."""
    rhs = spec.alpha * (spec.J @ (np.asarray(mu) * spec.beta))
    return -np.linalg.solve(H, rhs)


def clt_params(spec: ModelSpec, point: StationaryPoint, box=None) -> CltParams:
    if point.kind is not Kind.MAXIMUM or point.degenerate:
        raise DegenerateMaximizer(
            f"CLT needs a nondegenerate maximum; got {point.kind.value} with Hessian eigenvalues "
            f"{point.hess_eigs.tolist()}"
        )
    mu = np.asarray(point.x, dtype=float)
    H = FreeEnergy.from_spec(spec).hessian(mu)
    if np.any(np.linalg.eigvalsh(H) >= 0.0):
        raise DegenerateMaximizer("Hessian of f at the point is not negative definite")
    ra = np.sqrt(spec.alpha)
    sigma = ra[:, None] * np.linalg.inv(-H) * ra[None, :]
    sigma = 0.5 * (sigma + sigma.T)
    if np.linalg.eigvalsh(sigma).min() <= SPD_TOL:
        raise NumericalError("covariance is not positive definite")
    if spec.theta == 0.5:
        nu = ra * mean_shift_direction(spec, mu, H)
    else:
        nu = np.zeros(spec.K)
    return CltParams(mu=mu, nu=nu, sigma=sigma, theta=spec.theta, hessian=H, conditioned_box=box)


def unique_clt_params(spec: ModelSpec) -> CltParams:
    mset = global_maximizers(spec)
    return clt_params(spec, mset.unique())


def _in_interior(x, box):
    return all(iv.lo < v < iv.hi for v, iv in zip(x, box))


def _in_box(x, box):
    return all(bool(iv.contains(v)) for v, iv in zip(x, box))


def _face_points(box, l, side, n_total):
    """Grid of about ``n_total`` points on the face x_l = lo or hi of the closed box."""
    K = len(box)
    fixed = box[l].lo if side == 0 else box[l].hi
    if K == 1:
        return np.array([[fixed]])
    per = max(2, int(math.ceil(n_total ** (1.0 / (K - 1)))))
    axes = [np.linspace(iv.lo, iv.hi, per) for j, iv in enumerate(box) if j != l]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, K - 1)
    return np.insert(grid, l, fixed, axis=1)


def check_box(spec: ModelSpec, maximizers: MaximizerSet, box, index: int = 0) -> StationaryPoint:
    """Validate that ``box`` isolates one maximizer; returns it."""
    box = as_box(box, spec.K)
    tag = f"box {index} {' x '.join(str(iv) for iv in box)}"
    inside = [p for p in maximizers.points if _in_interior(p.x, box)]
    if len(inside) != 1:
        raise ValidationError(f"{tag} holds {len(inside)} maximizers in its interior, expected 1")
    mu = inside[0]
    if any(np.max(np.abs(q.x - mu.x)) > 1e-7 and _in_box(q.x, box) for q in maximizers.stationary):
        raise ValidationError(f"{tag} contains another stationary point of f")
    fe = FreeEnergy.from_spec(spec)
    for l in range(spec.K):
        for side in (0, 1):
            pts = np.clip(_face_points(box, l, side, FACE_SAMPLES), -1.0, 1.0)
            if np.max(fe.value(pts)) > mu.f_value - BOUNDARY_MARGIN:
                raise ValidationError(f"{tag}: f on a face comes within {BOUNDARY_MARGIN} of f(mu)")
    return mu


def conditional_clt_params(spec: ModelSpec, maximizers: MaximizerSet, boxes) -> list:
    maximizers.require_nondegenerate()
    out = []
    for i, box in enumerate(boxes):
        box = as_box(box, spec.K)
        out.append(clt_params(spec, check_box(spec, maximizers, box, i), box))
    return out


# --------------------------------------------------------------------------
# verification against finite N
# --------------------------------------------------------------------------


def probe_set(K: int):
    """Fixed MGF probes: +-0.5 e_l, +-1.0 e_l and 0.5 (e_l + e_m)."""
    eye = np.eye(K)
    T = [s * c * eye[l] for l in range(K) for c in (0.5, 1.0) for s in (1.0, -1.0)]
    T += [0.5 * (eye[l] + eye[m]) for l in range(K) for m in range(l + 1, K)]
    return np.array(T)


@dataclass(frozen=True)
class Tolerances:
    mean: float = 0.1
    cov: float = 0.1
    mgf: float = 0.1


@dataclass(frozen=True, eq=False)
class VerifyRow:
    N: int
    mean: np.ndarray
    cov: np.ndarray
    mean_err: np.ndarray
    cov_rel_err: float
    mgf_err: float
    passed: bool
    source: str
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "N": self.N,
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "mean_err": self.mean_err.tolist(),
            "cov_rel_err": self.cov_rel_err,
            "mgf_err": self.mgf_err,
            "pass": self.passed,
            "source": self.source,
            **self.extra,
        }


def _cov_rel_err(cov, sigma):
    return float(np.max(np.abs(cov - sigma)) / np.max(np.abs(sigma)))


def _exact_stats(spec, params, N, box, budget, threads):
    sizes = finite_sizes(spec, N)
    law = sector_law(spec, N, sizes=sizes, budget=budget, threads=threads)
    if box is not None:
        law = conditional_law(law, box)
    mom = moments(law, center=params.mu)
    log_mgf = np.array([mom.log_mgf(t) for t in probe_set(spec.K)])
    return mom.rescaled_mean, mom.rescaled_cov, log_mgf, {}


def _sampler_stats(spec, params, N, box, sampler_opts):
    from .sampler import ChainConfig, Init, multichain

    opts = dict(chains=4, burn_in_sweeps=500, sample_sweeps=20_000, thinning=1, seed=0)
    opts.update(sampler_opts or {})
    sizes = finite_sizes(spec, N)
    init = Init.at(params.mu) if box is not None else Init("Random")
    cfg = ChainConfig(N, opts["seed"], opts["burn_in_sweeps"], opts["sample_sweeps"], opts["thinning"], init)
    res = multichain(spec, sizes, cfg, opts["chains"], box=box, threads=opts.get("threads", 1))
    scale = np.sqrt(N * np.asarray(sizes.alpha_N))
    y = (res.pooled - params.mu) * scale
    if len(y) < 2:
        raise NumericalError("no samples left after box filtering")
    T = probe_set(spec.K)
    z = y @ T.T
    zmax = z.max(axis=0)
    log_mgf = zmax + np.log(np.mean(np.exp(z - zmax), axis=0))
    extra = {"rhat": None if res.rhat is None else res.rhat.tolist(), "samples": int(len(y))}
    return y.mean(axis=0), np.atleast_2d(np.cov(y, rowvar=False)), log_mgf, extra


def verify_clt(spec: ModelSpec, N_list, source: str = "exact", box=None, params: CltParams | None = None,
               tolerances: Tolerances = Tolerances(), budget: int = DEFAULT_BUDGET, threads: int | None = 1,
               sampler_opts: dict | None = None) -> list:
    """Finite-N mean, covariance and MGF of sqrt(N) sqrt(alpha_N) (m - mu) against the prediction."""
    source = source.lower()
    if source not in ("exact", "sampler"):
        raise ValidationError(f"unknown source {source!r}")
    if params is None:
        mset = global_maximizers(spec)
        if box is None:
            params = clt_params(spec, mset.unique())
        else:
            params = conditional_clt_params(spec, mset, [box])[0]
    if box is not None:
        box = as_box(box, spec.K)
    T = probe_set(spec.K)
    predicted = np.array([params.predicted_log_mgf(t) for t in T])

    def one(N):
        if source == "exact":
            mean, cov, log_mgf, extra = _exact_stats(spec, params, N, box, budget, 1)
        else:
            mean, cov, log_mgf, extra = _sampler_stats(spec, params, N, box, sampler_opts)
        mean_err = np.abs(mean - params.nu)
        cov_err = _cov_rel_err(cov, params.sigma)
        mgf_err = float(np.max(np.abs(log_mgf - predicted)))
        ok = bool(np.all(mean_err <= tolerances.mean) and cov_err <= tolerances.cov and mgf_err <= tolerances.mgf)
        return VerifyRow(int(N), mean, cov, mean_err, cov_err, mgf_err, ok, source, extra)

    N_list = [int(n) for n in N_list]
    workers = max(1, int(threads or 1))
    if workers > 1 and len(N_list) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, N_list))
    return [one(N) for N in N_list]


# --------------------------------------------------------------------------
# maximizer shift and tilt expansion
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ShiftReport:
    N: np.ndarray
    predicted: np.ndarray
    scaled_shift: np.ndarray
    rel_err: np.ndarray
    residual: np.ndarray
    residual_slope: float | None

    def to_dict(self):
        return {
            "N": self.N.tolist(),
            "predicted": self.predicted.tolist(),
            "scaled_shift": self.scaled_shift.tolist(),
            "rel_err": self.rel_err.tolist(),
            "residual": self.residual.tolist(),
            "residual_slope": self.residual_slope,
        }


def mu_shift_check(spec: ModelSpec, N_list) -> ShiftReport:
    """Compare N^theta (mu_N - mu) with -H^{-1} alpha J diag(mu) beta, mu_N at the target ratios."""
    base = global_maximizers(spec)
    mu = base.unique()
    H = FreeEnergy.from_spec(spec).hessian(mu.x)
    c = mean_shift_direction(spec, mu.x, H)
    Ns = np.array([float(n) for n in N_list])
    scaled, rel, resid = [], [], []
    for N in Ns:
        mset = global_maximizers(spec, alpha=target_ratios(spec, N))
        if mset.n != base.n:
            raise NumericalError(f"maximizer count changes from {base.n} to {mset.n} at N={N:g}")
        d = mset.unique().x - mu.x
        s = N ** spec.theta * d
        scaled.append(s)
        norm_c = np.linalg.norm(c)
        rel.append(np.linalg.norm(s - c) / norm_c if norm_c > 0 else np.linalg.norm(s))
        resid.append(np.linalg.norm(d - N ** (-spec.theta) * c))
    resid = np.array(resid)
    slope = None
    if len(Ns) >= 2 and np.all(resid > 0):
        slope = float(np.polyfit(np.log(Ns), np.log(resid), 1)[0])
    return ShiftReport(N=Ns, predicted=c, scaled_shift=np.array(scaled), rel_err=np.array(rel),
                       residual=resid, residual_slope=slope)


@dataclass(frozen=True)
class TiltCheck:
    N: int
    exact_log_ratio: float
    variational: float
    expansion: float


def tilt_expansion_check(spec: ModelSpec, N: int, t, budget: int = DEFAULT_BUDGET) -> TiltCheck:
    """log(Z_{N,t} / Z_N) exactly, as N [g_N(t, mu_{N,t}) - f_N(mu_N)], and by its quadratic expansion."""
    t = np.asarray(t, dtype=float)
    sizes = finite_sizes(spec, N)
    exact = (sector_law(spec, N, t, sizes=sizes, budget=budget).log_Z
             - sector_law(spec, N, sizes=sizes, budget=budget).log_Z)
    tilted, _ = tilted_maximizer(spec, sizes, t)
    plain, fe = tilted_maximizer(spec, sizes)
    variational = sizes.N * (tilted.f_value - plain.f_value)
    H = fe.hessian(plain.x)
    ra = np.sqrt(sizes.alpha_N)
    quad = -0.5 * (ra * t) @ np.linalg.solve(H, ra * t)
    expansion = float(quad + math.sqrt(sizes.N) * t @ (ra * plain.x))
    return TiltCheck(int(N), float(exact), float(variational), expansion)


__all__ = [
    "CltParams", "Tolerances", "VerifyRow", "ShiftReport", "TiltCheck", "clt_params", "unique_clt_params",
    "conditional_clt_params", "check_box", "probe_set", "verify_clt", "mu_shift_check",
    "tilt_expansion_check", "mean_shift_direction", "full_box", "tilt_linear",
]
