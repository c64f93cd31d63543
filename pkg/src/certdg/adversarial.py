"""Adversarial reference distribution and PGD attacks.

For a linear head the closest misclassified point has a closed form: the
region where class ``k`` beats the label ``y`` is a half-space, so the
nearest misclassified point is the projection onto the nearest of those
half-spaces, nudged slightly past the boundary.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import netcore
from .errors import DegenerateHead, InvalidArgument, UnsupportedLoss
from .transport import EmpiricalDistribution, w2_class_conditional

DEFAULT_OVERSHOOT = 1e-4


@dataclass
class AdvDistribution:
    Z: np.ndarray             # perturbed representations z'
    y: np.ndarray             # original labels
    distortion: np.ndarray    # ||z' - z||_2
    boundary_dist: np.ndarray  # exact distance to the misclassified region
    attack_success: float

    def as_empirical(self) -> EmpiricalDistribution:
        return EmpiricalDistribution(self.Z, self.y)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "y", "distortion"] + [f"z{j}" for j in range(self.Z.shape[1])])
            for i in range(self.Z.shape[0]):
                w.writerow([i, int(self.y[i]), repr(float(self.distortion[i]))]
                           + [repr(float(v)) for v in self.Z[i]])


@dataclass(frozen=True)
class NormalizedRadius:
    raw: float
    unit: float

    def __post_init__(self):
        if self.raw < 0 or not self.unit >= 0:
            raise InvalidArgument("radius and unit must be non-negative")

    @property
    def normalized(self) -> float:
        if self.unit == 0:  # every source point already misclassified
            return 0.0 if self.raw == 0 else math.inf
        return self.raw / self.unit

    @classmethod
    def from_normalized(cls, normalized: float, unit: float) -> "NormalizedRadius":
        return cls(normalized * unit, unit)


def _misclassified(L, y):
    return np.argmax(L, axis=1) != y


def boundary_distances(head, Z, y):
    """Distance from each ``z`` to the region where it is misclassified.

    Returns ``(dist, k_nearest, normals)``; ``dist`` is 0 for points already
    misclassified.  ``normals[i]`` is the unit vector pointing from ``z_i``
    towards the nearest boundary.
    """
    W, b = head
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    y = np.broadcast_to(np.asarray(y, dtype=np.int64), (Z.shape[0],))
    n, C = Z.shape[0], W.shape[0]
    L = Z @ W.T + b
    diff_W = W[y][:, None, :] - W[None, :, :]          # (n, C, m): W_y - W_k
    diff_b = b[y][:, None] - b[None, :]                 # (n, C)
    norms = np.linalg.norm(diff_W, axis=2)
    margins = L[np.arange(n), y][:, None] - L           # (W_y - W_k).z + b_y - b_k
    degenerate = (norms == 0) & (diff_b == 0)
    other = np.arange(C)[None, :] != y[:, None]
    usable = other & ~degenerate & (norms > 0)
    if np.any(~usable.any(axis=1)):
        raise DegenerateHead("every competing class shares the label's weights")
    d = np.where(usable, margins / np.where(norms > 0, norms, 1.0), np.inf)
    d = np.where(usable, np.maximum(d, 0.0), np.inf)
    k = np.argmin(d, axis=1)
    dist = d[np.arange(n), k]
    already = _misclassified(L, y)
    dist = np.where(already, 0.0, dist)
    normals = -diff_W[np.arange(n), k] / norms[np.arange(n), k][:, None]
    return dist, k, normals


def closest_misclassified(head, z, y, overshoot: float = DEFAULT_OVERSHOOT):
    """Closest misclassified point(s) and the distortion ``||z' - z||``.

    Works on one point ``(m,)`` or a batch ``(n, m)``.
    """
    if not overshoot > 0:
        raise InvalidArgument("overshoot must be positive")
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    y_arr = np.broadcast_to(np.asarray(y, dtype=np.int64), (Z.shape[0],))
    dist, _, normals = boundary_distances(head, Z, y_arr)
    W, b = head
    Zp = Z.copy()
    todo = dist > 0
    push = overshoot
    for _ in range(60):
        if not np.any(todo):
            break
        step = dist[todo] * (1.0 + push) + np.finfo(float).eps * (1.0 + np.abs(Z[todo]).max(axis=1))
        Zp[todo] = Z[todo] + step[:, None] * normals[todo]
        L = Zp @ W.T + b
        todo = todo & ~_misclassified(L, y_arr)
        push *= 2.0  # float rounding kept the point on the boundary; push further
    distortion = np.linalg.norm(Zp - Z, axis=1)
    if single:
        return Zp[0], float(distortion[0])
    return Zp, distortion


def gen_adv_distribution(head, Z, y, overshoot: float = DEFAULT_OVERSHOOT) -> AdvDistribution:
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[0] == 0:
        raise InvalidArgument("need at least one source point")
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    Zp, distortion = closest_misclassified(head, Z, y, overshoot)
    dist, _, _ = boundary_distances(head, Z, y)
    success = float(np.mean(_misclassified(Zp @ head[0].T + head[1], y)))
    return AdvDistribution(Zp, y.copy(), distortion, dist, success)


def rho_adv(Z, y, adv: AdvDistribution, method="auto") -> float:
    """Unit distance ``W_2(P_S, P_S_adv)`` used to normalise radii."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape != adv.Z.shape or not np.array_equal(np.asarray(y).reshape(-1), adv.y):
        raise InvalidArgument("adversarial distribution must match the source point for point")
    return w2_class_conditional(EmpiricalDistribution(Z, y), adv.as_empirical(), method=method)


def _project_l2(delta, eps):
    norms = np.linalg.norm(delta, axis=1, keepdims=True)
    scale = np.minimum(1.0, eps / np.maximum(norms, 1e-300))
    return delta * scale


def _pgd(start, grad_fn, loss_fn, eps, steps, step_size):
    """Normalised-gradient L2 PGD; keeps the highest-loss iterate per point."""
    if eps < 0:
        raise InvalidArgument("eps must be non-negative")
    x0 = start.copy()
    if eps == 0 or steps <= 0:
        return x0
    x = x0.copy()
    best, best_loss = x0.copy(), loss_fn(x0)
    for _ in range(steps):
        g = grad_fn(x)
        gn = np.linalg.norm(g, axis=1, keepdims=True)
        x = x + step_size * np.where(gn > 0, g / np.where(gn > 0, gn, 1.0), 0.0)
        x = x0 + _project_l2(x - x0, eps)
        cur = loss_fn(x)
        better = cur > best_loss
        best[better], best_loss[better] = x[better], cur[better]
    return best


def pgd_rep(head, z, y, eps: float, steps: int = 20, step_size: float | None = None,
            family="cross_entropy") -> np.ndarray:
    """L2 PGD on the representation: maximise the loss within ``||z' - z|| <= eps``."""
    fam = netcore.as_family(family)
    if not fam.differentiable:
        raise UnsupportedLoss("PGD needs a differentiable loss")
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    step_size = 2.5 * eps / max(steps, 1) if step_size is None else step_size
    out = _pgd(Z, lambda V: netcore.grad_loss_z(head, V, y, fam),
               lambda V: netcore.loss(head, V, y, fam), eps, steps, step_size)
    return out[0] if single else out


def pgd_input(params: netcore.ModelParams, x, y, eps: float, steps: int = 20,
              step_size: float | None = None, family="cross_entropy") -> np.ndarray:
    """L2 PGD in input space, differentiating through the representation network."""
    fam = netcore.as_family(family)
    if not fam.differentiable:
        raise UnsupportedLoss("PGD needs a differentiable loss")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    step_size = 2.5 * eps / max(steps, 1) if step_size is None else step_size
    out = _pgd(X, lambda V: netcore.input_grad(params, V, y, fam),
               lambda V: netcore.loss(params.head, netcore.forward_rep(params, V), y, fam),
               eps, steps, step_size)
    return out[0] if single else out
