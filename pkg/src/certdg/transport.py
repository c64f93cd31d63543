"""Optimal transport between labelled point clouds.

Two solvers are provided: an exact one (assignment or linear program) for
small instances and log-domain Sinkhorn for everything else.  The
class-constrained squared Euclidean cost makes ``OT_c = W_2^2``; since that
cost is infinite across classes, :func:`w2_class_conditional` solves one
sub-problem per class and never lets an infinity reach the arithmetic.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.special import logsumexp

from .errors import InfeasibleTransport, InvalidArgument

INF_CAP = 1e12
DEFAULT_MAX_ENTRIES = 4096
DEFAULT_MAX_ASSIGNMENT = 4096


@dataclass
class EmpiricalDistribution:
    """Weighted point cloud with integer labels."""

    Z: np.ndarray
    y: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        n = self.Z.shape[0]
        if n < 1 or self.y.shape[0] != n:
            raise InvalidArgument("an empirical distribution needs n >= 1 points with one label each")
        if self.weights is None:
            self.weights = np.full(n, 1.0 / n)
        else:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != (n,) or np.any(self.weights < 0) or abs(
                    self.weights.sum() - 1.0) > 1e-9:
                raise InvalidArgument("weights must be non-negative and sum to one")

    def __len__(self):
        return self.Z.shape[0]

    @property
    def uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))


@dataclass
class TransportPlan:
    plan: np.ndarray
    cost: float
    converged: bool = True

    def to_csv(self, path, atol=0.0):
        """Dump non-zero entries as ``row,col,mass``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "col", "mass"])
            for i, j in zip(*np.nonzero(self.plan > atol)):
                w.writerow([int(i), int(j), repr(float(self.plan[i, j]))])


def sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def cost_matrix_class_constrained(A: EmpiricalDistribution, B: EmpiricalDistribution) -> np.ndarray:
    """Squared distance within a class, ``+inf`` across classes."""
    C = sq_dists(A.Z, B.Z)
    C[A.y[:, None] != B.y[None, :]] = np.inf
    return C


def cost_matrix_joint(A: EmpiricalDistribution, B: EmpiricalDistribution, lam: float = 1.0) -> np.ndarray:
    """Feature distance plus ``lam`` times the squared one-hot label distance (0 or 2)."""
    if lam < 0:
        raise InvalidArgument("label weight must be non-negative")
    return sq_dists(A.Z, B.Z) + lam * 2.0 * (A.y[:, None] != B.y[None, :])


def _check_marginals(cost, a, b):
    cost = np.asarray(cost, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if cost.shape != (a.size, b.size):
        raise InvalidArgument(f"cost shape {cost.shape} does not match marginals {a.size}x{b.size}")
    if np.any(a < 0) or np.any(b < 0) or abs(a.sum() - b.sum()) > 1e-9:
        raise InvalidArgument("marginals must be non-negative with equal mass")
    return cost, a, b


def _uniform(w):
    return bool(np.all(w == w[0]))


def exact_ot(cost, a=None, b=None, max_entries=DEFAULT_MAX_ENTRIES,
             max_assignment=DEFAULT_MAX_ASSIGNMENT) -> TransportPlan:
    """Exact discrete OT.

    Uniform marginals are reduced to an assignment problem (replicating points
    to ``lcm(n, k)`` copies when ``n != k``); anything else goes to the HiGHS
    linear program, limited to ``max_entries`` plan entries.
    """
    cost = np.asarray(cost, dtype=float)
    n, k = cost.shape
    a = np.full(n, 1.0 / n) if a is None else a
    b = np.full(k, 1.0 / k) if b is None else b
    cost, a, b = _check_marginals(cost, a, b)
    finite = np.isfinite(cost)
    if np.any(~finite.any(axis=1) & (a > 0)) or np.any(~finite.any(axis=0) & (b > 0)):
        raise InfeasibleTransport("a point with mass has no finite-cost partner")
    capped = np.where(finite, cost, INF_CAP)

    L = n * k // math.gcd(n, k)
    if _uniform(a) and _uniform(b) and L <= max_assignment:
        rn, rk = L // n, L // k
        big = np.repeat(np.repeat(capped, rn, axis=0), rk, axis=1)
        rows, cols = linear_sum_assignment(big)
        plan = np.zeros((n, k))
        np.add.at(plan, (rows // rn, cols // rk), 1.0 / L)
        plan *= a.sum()
    else:
        if n * k > max_entries:
            raise InvalidArgument(
                f"{n}x{k} plan exceeds the exact-solver cap of {max_entries} entries")
        A_eq = np.zeros((n + k, n * k))
        for i in range(n):
            A_eq[i, i * k:(i + 1) * k] = 1.0
        for j in range(k):
            A_eq[n + j, j::k] = 1.0
        res = linprog(capped.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]),
                      bounds=(0, None), method="highs")
        if res.status != 0:
            raise InfeasibleTransport(f"linear program failed: {res.message}")
        plan = np.maximum(res.x.reshape(n, k), 0.0)
    if np.any(plan[~finite] > 1e-12):
        raise InfeasibleTransport("no coupling avoids the forbidden pairs")
    return TransportPlan(plan, float(np.sum(plan[finite] * cost[finite])), True)


def sinkhorn(cost, a=None, b=None, eps=1e-2, max_iters=10000, tol=1e-9) -> TransportPlan:
    """Entropic OT via log-domain Sinkhorn scaling with epsilon annealing.

    The regularisation starts at the cost scale and is halved down to ``eps``,
    warm-starting the dual potentials each time; small ``eps`` then converges
    in a few hundred iterations instead of tens of thousands.
    ``cost`` entries that are infinite are capped at a large finite value.
    ``converged`` reports whether the final stage met ``tol``; the returned
    plan is always rounded onto the exact marginals, and the reported cost is
    the unregularised ``<plan, cost>``.
    """
    if not eps > 0:
        raise InvalidArgument("eps must be positive")
    cost = np.asarray(cost, dtype=float)
    n, k = cost.shape
    a = np.full(n, 1.0 / n) if a is None else a
    b = np.full(k, 1.0 / k) if b is None else b
    cost, a, b = _check_marginals(cost, a, b)
    capped = np.where(np.isfinite(cost), cost, INF_CAP)
    with np.errstate(divide="ignore"):
        log_a, log_b = np.log(a), np.log(b)
    finite_max = float(np.max(capped[capped < INF_CAP], initial=0.0))
    schedule = []
    e = max(finite_max, eps)
    while e > eps:
        schedule.append(e)
        e /= 2.0
    schedule.append(eps)
    f = np.zeros(n)
    g = np.zeros(k)
    used = 0
    converged = False
    for stage, e in enumerate(schedule):
        last = stage == len(schedule) - 1
        budget = max_iters - used if last else min(200, max(max_iters - used, 0))
        stage_tol = tol if last else max(tol, 1e-4)
        M = -capped / e
        converged = False
        for _ in range(budget):
            f = e * (log_a - logsumexp(M + g[None, :] / e, axis=1))
            g = e * (log_b - logsumexp(M + f[:, None] / e, axis=0))
            used += 1
            # columns are exact after the g-update; rows carry the violation
            row = np.exp(M + f[:, None] / e + g[None, :] / e).sum(axis=1)
            if np.abs(row - a).sum() < stage_tol:
                converged = True
                break
    M = -capped / eps
    plan = _round_to_marginals(np.exp(M + f[:, None] / eps + g[None, :] / eps), a, b)
    return TransportPlan(plan, float(np.sum(plan * capped)), converged)


def _round_to_marginals(P, a, b):
    """Project a near-feasible plan onto the coupling polytope.

    Rows and columns are scaled down to their targets, then the missing mass
    is restored by a rank-one correction, so every returned plan is a valid
    coupling and its cost upper-bounds the exact optimum.
    """
    r = P.sum(axis=1)
    P = P * np.minimum(1.0, a / np.where(r > 0, r, 1.0))[:, None]
    c = P.sum(axis=0)
    P = P * np.minimum(1.0, b / np.where(c > 0, c, 1.0))[None, :]
    err_r = a - P.sum(axis=1)
    err_c = b - P.sum(axis=0)
    mass = err_r.sum()
    if mass > 0:
        P = P + np.outer(err_r, err_c) / mass
    return P


def _class_groups(A: EmpiricalDistribution, B: EmpiricalDistribution, atol=1e-6):
    classes = np.union1d(np.unique(A.y), np.unique(B.y))
    groups = []
    for c in classes:  # fixed ascending order keeps the sum deterministic
        ia, ib = np.flatnonzero(A.y == c), np.flatnonzero(B.y == c)
        wa, wb = A.weights[ia].sum(), B.weights[ib].sum()
        if abs(wa - wb) > atol:
            raise InfeasibleTransport(
                f"class {c} carries mass {wa:.6g} in one distribution and {wb:.6g} in the other")
        if wa > 0:
            groups.append((c, ia, ib, wa))
    return groups


def w2_squared_class_conditional(A: EmpiricalDistribution, B: EmpiricalDistribution,
                                 method="auto", eps=1e-2, max_entries=DEFAULT_MAX_ENTRIES) -> float:
    """``OT_c(A, B)`` for the label-constrained squared Euclidean cost."""
    if A.Z.shape[1] != B.Z.shape[1]:
        raise InvalidArgument("distributions live in different dimensions")
    total = 0.0
    for _, ia, ib, wc in _class_groups(A, B):
        a = A.weights[ia] / wc
        b = B.weights[ib] / wc
        C = sq_dists(A.Z[ia], B.Z[ib])
        n, k = C.shape
        L = n * k // math.gcd(n, k)
        small = (_uniform(a) and _uniform(b) and L <= DEFAULT_MAX_ASSIGNMENT) or n * k <= max_entries
        if method == "exact" or (method == "auto" and small):
            value = exact_ot(C, a, b, max_entries=max_entries).cost
        elif method in ("sinkhorn", "auto"):
            value = sinkhorn(C, a, b, eps=eps).cost
        else:
            raise InvalidArgument(f"unknown OT method {method!r}")
        total += wc * value
    return total


def w2_class_conditional(A: EmpiricalDistribution, B: EmpiricalDistribution, method="auto",
                         eps=1e-2, max_entries=DEFAULT_MAX_ENTRIES) -> float:
    """Type-2 Wasserstein distance with couplings restricted to equal labels."""
    return math.sqrt(max(w2_squared_class_conditional(A, B, method, eps, max_entries), 0.0))
