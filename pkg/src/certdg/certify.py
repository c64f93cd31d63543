"""Worst-case loss over a Wasserstein ball in representation space.

The worst-case expected loss over all distributions within ``W_2 <= rho`` of
the empirical source equals the one-dimensional dual

    inf_{gamma >= 0}  gamma * rho^2 + mean_i phi_gamma(z_i, y_i),
    phi_gamma(z0, y0) = sup_z  loss(W z + b, y0) - gamma * ||z - z0||^2.

:func:`cert_dg` runs the alternating ascent-on-z / clipped-descent-on-gamma
scheme.  After every outer pass ``phi_gamma`` is evaluated at its sup for the
current gamma; each such value is an upper bound, and the smallest is kept.
:func:`cert_01` handles the 0/1 loss, whose surrogate has a closed form.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit

from . import netcore
from .adversarial import NormalizedRadius, boundary_distances, gen_adv_distribution, rho_adv
from .errors import InvalidArgument, UnboundedSurrogate, UnsupportedLoss

log = logging.getLogger(__name__)

GAMMA_BOUNDS_01 = (1e-20, 100.0)


@dataclass
class CertConfig:
    T1: int = 5
    T2: int = 1
    alpha_step: float = 0.1
    beta_step: float = 0.05
    gamma_init: float = 1.0
    gamma_min: float = 1e-6
    gamma_max: float = 1e4
    batch: int = 100
    seed: int = 0
    track_perturbations: bool = True
    gap_tol: float = 0.1        # relative tolerance on |rho^2 - mean distortion|
    refine_gamma: bool = False  # extra 1-D minimisation of the exact dual after the loop
    polish_iters: int = 200
    divergence_cap: float = 1e6  # per representation dimension

    def __post_init__(self):
        if not 0 < self.gamma_min <= self.gamma_init <= self.gamma_max:
            raise InvalidArgument("need 0 < gamma_min <= gamma_init <= gamma_max")
        if self.alpha_step <= 0 or self.beta_step <= 0:
            raise InvalidArgument("step sizes must be positive")
        if self.T1 < 0 or self.T2 < 0 or self.batch < 1:
            raise InvalidArgument("T1, T2 must be >= 0 and batch >= 1")


@dataclass
class DualState:
    gamma: float
    Z: np.ndarray            # perturbed representations, one per source point
    distortions: np.ndarray  # ||z' - z0||^2


@dataclass
class Certificate:
    radius: NormalizedRadius
    loss_family: str
    worst_case_loss: float
    gamma_opt: float
    mean_sq_distortion: float
    dual_gap_diag: float
    iterations_used: int
    converged: bool = True
    empirical_loss: float = float("nan")
    note: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["radius"] = {"raw": self.radius.raw, "unit": self.radius.unit,
                       "normalized": self.radius.normalized}
        return d

    def csv_row(self) -> dict:
        return {"rho_raw": self.radius.raw, "rho_normalized": self.radius.normalized,
                "family": self.loss_family, "worst_case_loss": self.worst_case_loss,
                "gamma_opt": self.gamma_opt, "mean_sq_distortion": self.mean_sq_distortion,
                "converged": self.converged}


CSV_COLUMNS = ["rho_raw", "rho_normalized", "family", "worst_case_loss", "gamma_opt",
               "mean_sq_distortion", "converged"]


def _prep(Z0, y):
    Z0 = np.atleast_2d(np.asarray(Z0, dtype=float))
    y = np.broadcast_to(np.asarray(y, dtype=np.int64), (Z0.shape[0],)).copy()
    if Z0.shape[0] == 0:
        raise InvalidArgument("need at least one source point")
    return Z0, y


def concavity_threshold(head) -> float:
    """Smallest gamma for which the cross-entropy surrogate is concave in z.

    The CE Hessian through a linear head is a covariance of the rows of W, so
    its top eigenvalue is at most ``max_{k,l} ||W_k - W_l||^2 / 4``.
    """
    W = head[0]
    diffs = W[:, None, :] - W[None, :, :]
    return 0.5 * float(np.max(np.einsum("klm,klm->kl", diffs, diffs))) / 4.0


def surrogate_value(head, z0, y, z, gamma, family="cross_entropy"):
    """``loss(W z + b, y) - gamma * ||z - z0||^2`` at a candidate ``z`` (not the sup)."""
    if gamma < 0:
        raise InvalidArgument("gamma must be non-negative")
    z0 = np.asarray(z0, dtype=float)
    z = np.asarray(z, dtype=float)
    pen = gamma * np.sum((z - z0) ** 2, axis=-1)
    return netcore.loss(head, z, y, family) - pen


def _ascent(Z0, y, gamma, steps, alpha_step, grad_fn, value_fn, start, cap):
    Z = start.copy()
    best, best_val = Z.copy(), value_fn(Z)
    for _ in range(steps):
        Z = Z + alpha_step * (grad_fn(Z) - 2.0 * gamma * (Z - Z0))
        if not np.all(np.isfinite(Z)) or np.max(np.sum((Z - Z0) ** 2, axis=1)) > cap:
            raise UnboundedSurrogate(
                f"surrogate ascent diverged at gamma={gamma:.4g}; gamma is below the concavity threshold")
        val = value_fn(Z)
        better = val > best_val
        best[better], best_val[better] = Z[better], val[better]
    return best, best_val


def prox_ascent_step(head, Z, Z0, y, gamma, alpha_step, family):
    """One ascent step on ``phi_gamma`` with the quadratic penalty taken implicitly.

    ``z <- (z + a grad loss(z) + 2 a gamma z0) / (1 + 2 a gamma)`` has the same
    fixed points as the explicit step ``z + a grad phi`` but stays stable for
    any gamma, which matters once gamma grows at small radii.
    """
    a = alpha_step
    g = netcore.grad_loss_z(head, Z, y, family)
    return (Z + a * g + 2.0 * a * gamma * Z0) / (1.0 + 2.0 * a * gamma)


def maximize_surrogate_rep(head, z0, y, gamma, steps=100, alpha_step=0.1, family="cross_entropy",
                           warm_start=None, divergence_cap=1e6):
    """Gradient ascent on ``phi_gamma`` from ``warm_start`` (default ``z0``).

    Returns the best iterate and its surrogate value.
    """
    fam = netcore.as_family(family)
    if not fam.differentiable:
        raise UnsupportedLoss("use cert_01 for the zero_one loss")
    z0 = np.asarray(z0, dtype=float)
    single = z0.ndim == 1
    Z0, y = _prep(z0, y)
    start = Z0 if warm_start is None else np.atleast_2d(np.asarray(warm_start, dtype=float))
    Z, val = _ascent(Z0, y, gamma, steps, alpha_step,
                     lambda Z: netcore.grad_loss_z(head, Z, y, fam),
                     lambda Z: surrogate_value(head, Z0, y, Z, gamma, fam),
                     start, divergence_cap * Z0.shape[1])
    return (Z[0], float(val[0])) if single else (Z, val)


def maximize_surrogate_input(params: netcore.ModelParams, x0, y, gamma, steps=100, alpha_step=0.1,
                             family="cross_entropy", divergence_cap=1e6):
    """Ascent over inputs with the penalty measured in representation space.

    Only push-forward perturbations ``g(x)`` are reachable, so the value is a
    lower bound on the representation-space surrogate.
    """
    fam = netcore.as_family(family)
    if not fam.differentiable:
        raise UnsupportedLoss("use cert_01 for the zero_one loss")
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim == 1
    X0 = np.atleast_2d(x0)
    y = np.broadcast_to(np.asarray(y, dtype=np.int64), (X0.shape[0],)).copy()
    Z0 = netcore.forward_rep(params, X0)
    head = params.head
    cap = divergence_cap * Z0.shape[1]

    def value(X):
        return surrogate_value(head, Z0, y, netcore.forward_rep(params, X), gamma, fam)

    X = X0.copy()
    best, best_val = X.copy(), value(X)
    for _ in range(steps):
        Z, cache = netcore.mlp_forward(params.layers, X)
        dZ = netcore.grad_loss_z(head, Z, y, fam) - 2.0 * gamma * (Z - Z0)
        _, dX = netcore.backward_rep(params, X, dZ, cache=cache)
        X = X + alpha_step * dX
        if not np.all(np.isfinite(X)) or np.max(np.sum((
                netcore.forward_rep(params, X) - Z0) ** 2, axis=1)) > cap:
            raise UnboundedSurrogate(f"input-space ascent diverged at gamma={gamma:.4g}")
        val = value(X)
        better = val > best_val
        best[better], best_val[better] = X[better], val[better]
    return (best[0], float(best_val[0])) if single else (best, best_val)


def _hinge_sup(head, Z0, y, gamma, alpha):
    """Exact sup of the modified-hinge surrogate for a linear head.

    For ``alpha <= 1`` the loss is ``max_{k != y, s in {1, alpha}} s (1 - m_k(z))``
    with affine margins ``m_k``; the sup of a max is the max of the per-piece
    sups, each a concave quadratic with maximiser ``z0 - s (W_y - W_k) / (2 gamma)``.
    """
    W, b = head
    n, C = Z0.shape[0], W.shape[0]
    rows = np.arange(n)
    L = Z0 @ W.T + b
    margins = L[rows, y][:, None] - L                       # (n, C)
    dW = W[y][:, None, :] - W[None, :, :]                   # (n, C, m)
    sq = np.einsum("nkm,nkm->nk", dW, dW)
    best_val = np.full(n, -np.inf)
    best_z = Z0.copy()
    for s in (1.0, alpha):
        vals = s * (1.0 - margins) + s * s * sq / (4.0 * gamma)
        vals[rows, y] = -np.inf
        k = np.argmax(vals, axis=1)
        v = vals[rows, k]
        better = v > best_val
        cand = Z0 - s * dW[rows, k] / (2.0 * gamma)
        best_val = np.where(better, v, best_val)
        best_z[better] = cand[better]
    # report the surrogate evaluated at the maximiser (identical up to rounding)
    return best_z, surrogate_value(head, Z0, y, best_z, gamma, netcore.LossFamily("modified_hinge", alpha))


def _ce_sup_binary(head, Z0, y, gamma, bisect_iters=200):
    """Global sup of the CE surrogate for a two-class linear head, any ``gamma > 0``.

    With ``w = W_y - W_k`` the loss is ``softplus(-(w.z + c))``, so only the
    component of ``z - z0`` along ``-w`` helps.  Writing ``a = ||w||`` and
    ``s`` for that distance, ``f(s) = softplus(a s - t0) - gamma s^2``.  The
    derivative ``f'`` changes monotonicity only where
    ``sigmoid * (1 - sigmoid) = 2 gamma / a^2``, which has closed-form roots,
    so bisection on each monotone piece finds every local maximum.
    """
    W, b = head
    n = Z0.shape[0]
    rows = np.arange(n)
    k = 1 - y
    w = W[y] - W[k]
    a = np.linalg.norm(w, axis=1)
    t0 = np.einsum("nm,nm->n", w, Z0) + b[y] - b[k]
    safe_a = np.where(a > 0, a, 1.0)

    def fprime(s):
        return a * expit(a * s - t0) - 2.0 * gamma * s

    def f(s):
        return np.logaddexp(0.0, a * s - t0) - gamma * s * s

    smax = a / (2.0 * gamma)
    cuts = [np.zeros(n), smax.copy(), smax.copy()]
    c = 2.0 * gamma / np.where(a > 0, a * a, 1.0)
    has = (a > 0) & (c < 0.25)
    root = np.sqrt(np.maximum(1.0 - 4.0 * c, 0.0))
    for j, sig in enumerate(((1.0 - root) / 2.0, (1.0 + root) / 2.0)):
        with np.errstate(divide="ignore"):
            u = np.log(sig) - np.log1p(-sig)
        p = np.clip((t0 + u) / safe_a, 0.0, smax)
        cuts[j + 1] = np.where(has & np.isfinite(u), p, smax)
    cuts[2] = np.maximum(cuts[2], cuts[1])
    cuts.append(smax)
    best_s = np.zeros(n)
    best_f = f(best_s)
    # endpoints too: rounding can leave f' a hair above zero at smax
    for cut in cuts[1:]:
        fc = f(cut)
        better = (a > 0) & (fc > best_f)
        best_s = np.where(better, cut, best_s)
        best_f = np.where(better, fc, best_f)
    for lo0, hi0 in zip(cuts[:-1], cuts[1:]):
        lo, hi = lo0.copy(), hi0.copy()
        ok = (a > 0) & (hi > lo) & (fprime(lo) > 0) & (fprime(hi) <= 0)
        if not np.any(ok):
            continue
        for _ in range(bisect_iters):
            mid = 0.5 * (lo + hi)
            if np.all((mid == lo) | (mid == hi) | ~ok):
                break
            up = fprime(mid) > 0
            lo = np.where(ok & up, mid, lo)
            hi = np.where(ok & ~up, mid, hi)
        cand = np.where(fprime(hi) >= 0, hi, lo)
        fc = f(cand)
        better = ok & (fc > best_f)
        best_s = np.where(better, cand, best_s)
        best_f = np.where(better, fc, best_f)
    Z = Z0 - best_s[:, None] * w / safe_a[:, None]
    Z[rows[a == 0]] = Z0[a == 0]
    return Z, surrogate_value(head, Z0, y, Z, gamma, netcore.CROSS_ENTROPY)


def _ce_sup(head, Z0, y, gamma, start, iters, cap):
    """Damped Newton ascent on the CE surrogate (concave for gamma above threshold)."""
    W, b = head
    n, m = Z0.shape
    rows = np.arange(n)
    fam = netcore.CROSS_ENTROPY
    lip = 2.0 * gamma + 2.0 * concavity_threshold(head)

    def val(Z):
        return surrogate_value(head, Z0, y, Z, gamma, fam)

    Z = start.copy()
    f = val(Z)
    start_f = val(Z0)
    swap = start_f > f
    Z[swap], f[swap] = Z0[swap], start_f[swap]
    active = np.ones(n, dtype=bool)
    eye = np.eye(m)
    for _ in range(iters):
        if not np.any(active):
            break
        idx = np.flatnonzero(active)
        Za = Z[idx]
        L = Za @ W.T + b
        p = np.exp(L - L.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        dl = p.copy()
        dl[np.arange(idx.size), y[idx]] -= 1.0
        g = dl @ W - 2.0 * gamma * (Za - Z0[idx])
        Wp = p @ W                                               # E_p[W_k]
        cov = np.einsum("nk,km,kl->nml", p, W, W) - np.einsum("nm,nl->nml", Wp, Wp)
        H = cov - 2.0 * gamma * eye
        direction = g / lip
        try:
            evals = np.linalg.eigvalsh(H)
            neg_def = evals.max(axis=1) < -1e-12
            if np.any(neg_def):
                direction[neg_def] = -np.linalg.solve(H[neg_def], g[neg_def][..., None])[..., 0]
        except np.linalg.LinAlgError:
            pass
        step = np.ones(idx.size)
        fa = f[idx]
        new = Za + direction
        fn = surrogate_value(head, Z0[idx], y[idx], new, gamma, fam)
        for _ in range(40):
            bad = fn < fa
            if not np.any(bad):
                break
            step[bad] *= 0.5
            new[bad] = Za[bad] + step[bad][:, None] * direction[bad]
            fn[bad] = surrogate_value(head, Z0[idx][bad], y[idx][bad], new[bad], gamma, fam)
        improved = fn >= fa
        Z[idx[improved]] = new[improved]
        f[idx[improved]] = fn[improved]
        gnorm = np.linalg.norm(g, axis=1)
        done = (gnorm <= 1e-12 * (1.0 + np.abs(fa))) | ~improved | (
            np.abs(fn - fa) <= 1e-15 * (1.0 + np.abs(fa)))
        active[idx[done]] = False
        if np.max(np.sum((Z - Z0) ** 2, axis=1)) > cap:
            raise UnboundedSurrogate(f"surrogate sup diverged at gamma={gamma:.4g}")
    return Z, f


def surrogate_sup(head, Z0, y, gamma, family="cross_entropy", start=None, iters=200,
                  divergence_cap=1e6):
    """``phi_gamma`` at (numerically) its supremum, per point.

    Closed form for the modified hinge; an exact 1-D reduction for two-class
    cross-entropy; damped Newton for cross-entropy with more classes, which
    reaches the global sup whenever ``gamma >= concavity_threshold(head)``.
    """
    fam = netcore.as_family(family)
    if not gamma > 0:
        raise InvalidArgument("the surrogate sup needs gamma > 0")
    Z0, y = _prep(Z0, y)
    start = Z0 if start is None else np.atleast_2d(np.asarray(start, dtype=float))
    cap = divergence_cap * Z0.shape[1]
    if fam.name == "modified_hinge" and fam.alpha <= 1.0:
        return _hinge_sup(head, Z0, y, gamma, fam.alpha)
    if fam.name == "cross_entropy":
        if head[0].shape[0] == 2:
            return _ce_sup_binary(head, Z0, y, gamma)
        return _ce_sup(head, Z0, y, gamma, start, iters, cap)
    if fam.name == "zero_one":
        raise UnsupportedLoss("use cert_01 for the zero_one loss")
    # modified hinge with alpha > 1 is not piecewise-max; fall back to plain ascent
    Z, _ = _ascent(Z0, y, gamma, iters, 0.5 / gamma,
                   lambda Z: netcore.grad_loss_z(head, Z, y, fam),
                   lambda Z: surrogate_value(head, Z0, y, Z, gamma, fam), start, cap)
    return Z, surrogate_value(head, Z0, y, Z, gamma, fam)


def dual_objective(head, Z0, y, rho, gamma, family="cross_entropy", start=None):
    """``gamma * rho^2 + mean phi_gamma`` with the sup evaluated numerically."""
    Z, phi = surrogate_sup(head, Z0, y, gamma, family, start=start)
    return gamma * rho * rho + float(np.mean(phi)), Z


def _unit_for(head, Z0, y, unit):
    if unit is not None:
        return float(unit)
    adv = gen_adv_distribution(head, Z0, y)
    return rho_adv(Z0, y, adv)


def _gamma_floor(head, fam, cfg):
    # the two-class CE sup is exact for every gamma, so only multi-class needs the floor
    if fam.name == "cross_entropy" and head[0].shape[0] > 2:
        return max(cfg.gamma_min, concavity_threshold(head))
    return cfg.gamma_min


def cert_dg(head, Z0, y, rho, cfg: CertConfig | None = None, family="cross_entropy",
            unit=None, state: DualState | None = None, return_state=False):
    """Certified worst-case loss at radius ``rho`` (raw W2 units).

    ``unit`` is the normalisation distance (computed from the adversarial
    distribution when omitted).  ``state`` warm-starts gamma and the buffered
    perturbations.
    """
    cfg = cfg or CertConfig()
    fam = netcore.as_family(family)
    if not fam.differentiable:
        raise UnsupportedLoss("use cert_01 for the zero_one loss")
    if rho < 0:
        raise InvalidArgument("radius must be non-negative")
    Z0, y = _prep(Z0, y)
    n = Z0.shape[0]
    radius = NormalizedRadius(float(rho), _unit_for(head, Z0, y, unit))
    empirical = float(np.mean(netcore.loss(head, Z0, y, fam)))

    if rho == 0:
        st = DualState(cfg.gamma_max, Z0.copy(), np.zeros(n))
        cert = Certificate(radius, fam.name, empirical, cfg.gamma_max, 0.0, 0.0, 0, True, empirical,
                           "zero radius: empirical loss")
        return (cert, st) if return_state else cert

    lo, hi = _gamma_floor(head, fam, cfg), cfg.gamma_max
    if lo > hi:
        raise InvalidArgument(f"gamma floor {lo:.4g} exceeds gamma_max {hi:.4g}")
    rho2 = rho * rho
    if state is not None:
        gamma = float(np.clip(state.gamma, lo, hi))
        Zp = state.Z.copy()
    else:
        gamma = float(np.clip(cfg.gamma_init, lo, hi))
        Zp = Z0.copy()
    cap = cfg.divergence_cap * Z0.shape[1]
    order = np.random.default_rng(cfg.seed).permutation(n)
    batches = [order[i:i + cfg.batch] for i in range(0, n, cfg.batch)]
    iterations = 0
    best = None  # (value, gamma, Zs): every gamma gives a valid bound, keep the smallest
    for _ in range(cfg.T1):
        for idx in batches:
            for _ in range(cfg.T2):
                zb, z0b, yb = Zp[idx], Z0[idx], y[idx]
                zb = prox_ascent_step(head, zb, z0b, yb, gamma, cfg.alpha_step, fam)
                if not np.all(np.isfinite(zb)) or np.max(np.sum((zb - z0b) ** 2, axis=1)) > cap:
                    raise UnboundedSurrogate(
                        f"ascent diverged at gamma={gamma:.4g}; raise gamma_min")
                Zp[idx] = zb
                msd_b = float(np.mean(np.sum((zb - z0b) ** 2, axis=1)))
                gamma = float(np.clip(gamma - cfg.beta_step * (rho2 - msd_b), lo, hi))
                iterations += 1
        Zs, phi = surrogate_sup(head, Z0, y, gamma, fam, start=Zp, iters=cfg.polish_iters,
                                divergence_cap=cfg.divergence_cap)
        value = gamma * rho2 + float(np.mean(phi))
        if best is None or value < best[0]:
            best = (value, gamma, Zs)
    if best is None:
        Zs, phi = surrogate_sup(head, Z0, y, gamma, fam, start=Zp, iters=cfg.polish_iters,
                                divergence_cap=cfg.divergence_cap)
        best = (gamma * rho2 + float(np.mean(phi)), gamma, Zs)
    value, gamma, Zs = best
    note = ""
    if cfg.refine_gamma:
        res = minimize_scalar(
            lambda u: dual_objective(head, Z0, y, rho, math.exp(u), fam)[0],
            bounds=(math.log(lo), math.log(hi)), method="bounded", options={"xatol": 1e-6})
        g_ref = float(math.exp(res.x))
        v_ref, Z_ref = dual_objective(head, Z0, y, rho, g_ref, fam)
        if v_ref < value:
            gamma, value, Zs = g_ref, v_ref, Z_ref
            note = "gamma refined by bounded scalar minimisation"
    msd = float(np.mean(np.sum((Zs - Z0) ** 2, axis=1)))
    gap = abs(rho2 - msd)
    converged = gap <= cfg.gap_tol * rho2
    if not converged:
        at = "lower" if math.isclose(gamma, lo) else "upper" if math.isclose(gamma, hi) else None
        note = (note + "; " if note else "") + (
            f"dual gap {gap:.3g} above tolerance" + (f" (gamma at its {at} bound)" if at else ""))
        log.info("certificate at rho=%.4g not converged: %s", rho, note)
    cert = Certificate(radius, fam.name, value, gamma, msd, gap, iterations, converged,
                       empirical, note)
    if return_state:
        return cert, DualState(gamma, Zp, np.sum((Zp - Z0) ** 2, axis=1))
    return cert


def zero_one_dual(d2, rho, gamma):
    """``gamma rho^2 + mean max(0, 1 - gamma d_i^2)`` for the 0/1 loss."""
    d2 = np.asarray(d2, dtype=float)
    return gamma * rho * rho + float(np.mean(np.maximum(0.0, 1.0 - gamma * d2)))


def _zero_one_minimize(d2, rho, bounds):
    """Exact minimum of the piecewise-linear convex 0/1 dual over ``bounds``.

    Candidates are the bounds and every breakpoint ``1 / d_i^2`` inside them;
    each is evaluated with sorted prefix sums.
    """
    lo, hi = bounds
    n = d2.size
    s = np.sort(d2)
    csum = np.concatenate([[0.0], np.cumsum(s)])
    with np.errstate(divide="ignore"):
        bps = 1.0 / s[s > 0]
    cands = np.unique(np.concatenate([[lo, hi], bps[(bps >= lo) & (bps <= hi)]]))
    # active terms: gamma * d^2 < 1
    thresh = np.where(cands > 0, 1.0 / cands, np.inf)
    cnt = np.searchsorted(s, thresh, side="left")
    values = cands * (rho * rho) + (cnt - cands * csum[cnt]) / n
    j = int(np.argmin(values))
    return float(values[j]), float(cands[j])


def cert_01(head, Z0, y, rho, unit=None, gamma_bounds=GAMMA_BOUNDS_01) -> Certificate:
    """Certified worst-case 0/1 loss (error rate) at radius ``rho``."""
    if rho < 0:
        raise InvalidArgument("radius must be non-negative")
    Z0, y = _prep(Z0, y)
    dist, _, _ = boundary_distances(head, Z0, y)
    d2 = dist * dist
    radius = NormalizedRadius(float(rho), _unit_for(head, Z0, y, unit))
    err = float(np.mean(d2 == 0))
    if rho == 0:
        return Certificate(radius, "zero_one", err, float(gamma_bounds[1]), 0.0, 0.0, 0, True, err,
                           "zero radius: empirical error rate")
    value, gamma = _zero_one_minimize(d2, float(rho), gamma_bounds)
    moved = gamma * d2 < 1.0
    msd = float(np.sum(d2[moved]) / d2.size)
    return Certificate(radius, "zero_one", value, gamma, msd, abs(rho * rho - msd), d2.size, True,
                       err)


def cert_sweep(head, Z0, y, radii, cfg: CertConfig | None = None, family="cross_entropy",
               unit=None):
    """One certificate per radius (ascending).  Failures are recorded, not raised."""
    cfg = cfg or CertConfig()
    radii = [float(r) for r in radii]
    if any(b < a for a, b in zip(radii[:-1], radii[1:])):
        raise InvalidArgument("radii must be sorted ascending")
    fam = netcore.as_family(family)
    Z0, y = _prep(Z0, y)
    unit = _unit_for(head, Z0, y, unit)
    out = []
    state = None
    for r in radii:
        try:
            if fam.name == "zero_one":
                out.append(cert_01(head, Z0, y, r, unit=unit))
                continue
            cert, st = cert_dg(head, Z0, y, r, cfg, fam, unit=unit,
                               state=state if cfg.track_perturbations else None, return_state=True)
            if r > 0:
                state = st
            out.append(cert)
        except (UnboundedSurrogate, InvalidArgument) as exc:
            log.warning("certification failed at rho=%.4g: %s", r, exc)
            out.append(Certificate(NormalizedRadius(r, unit), fam.name, float("nan"), float("nan"),
                                   float("nan"), float("nan"), 0, False, float("nan"), str(exc)))
    return out
