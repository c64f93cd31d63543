"""Domain-generalisation objectives and the distributionally robust training loop.

Every objective is expressed as a gradient on the representations of each
source batch plus a gradient on the head; :class:`Trainer` then pushes the
representation gradients through ``g`` and takes one SGD step.

Objectives (``L`` = mean cross-entropy over the pooled source batch):

- ``erm``:  ``L``
- ``wm``:   ``L + sum_k W2^2(D_k, D \\ D_k)`` with the joint feature+label cost
- ``g2dm``: ``L - sum_k L_k`` against one-vs-all domain discriminators
- ``vrex``: ``mean_k R_k + beta * Var_k(R_k)`` over per-domain risks

DR-DG adds ``mean loss(h(z'), y)`` at perturbed representations
``z' = g(x) + delta`` found by ascent on the robust surrogate, with the ball
radius set to ``F`` times the current adversarial unit distance.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import netcore
from .adversarial import gen_adv_distribution, rho_adv
from .certify import CertConfig, prox_ascent_step
from .domains import DomainDataset
from .errors import DegenerateHead, InvalidArgument, TrainingDiverged
from .netcore import Layer, ModelParams
from .transport import EmpiricalDistribution, cost_matrix_joint, exact_ot

log = logging.getLogger(__name__)

DG_KINDS = ("erm", "wm", "g2dm", "vrex")
LOG_COLUMNS = ["epoch", "source_loss", "dg_loss", "dro_loss", "rho_adv", "gamma"]


@dataclass
class DGMethod:
    kind: str = "erm"
    lam: float = 1.0          # label weight in the WM joint cost
    beta_vrex: float = 1.0
    wm_weight: float = 1.0
    disc_hidden: int = 16

    def __post_init__(self):
        if self.kind not in DG_KINDS:
            raise InvalidArgument(f"unknown DG method {self.kind!r}; choose from {DG_KINDS}")
        if self.lam < 0 or self.beta_vrex < 0 or self.wm_weight < 0:
            raise InvalidArgument("DG weights must be non-negative")


@dataclass
class DRDGConfig:
    F: float = 0.5
    lr: float = 0.05
    epochs: int = 100
    dg: DGMethod = field(default_factory=DGMethod)
    inner: CertConfig = field(default_factory=lambda: CertConfig(T2=1, gamma_init=1.0))
    batch_size: int = 64
    seed: int = 0
    hidden: tuple = (16, 16)
    rep_dim: int = 2
    dg_term: str = "full"   # "full": l_dg includes the classification loss; "regularizer": it does not
    adv_sample: int = 1000

    def __post_init__(self):
        if self.F < 0:
            raise InvalidArgument("F must be non-negative")
        if not self.lr > 0:
            raise InvalidArgument("learning rate must be positive")
        if self.dg_term not in ("full", "regularizer"):
            raise InvalidArgument("dg_term must be 'full' or 'regularizer'")
        if self.batch_size < 1 or self.epochs < 0:
            raise InvalidArgument("batch_size must be >= 1 and epochs >= 0")


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------

def wm_loss(Zs: Sequence[np.ndarray], ys: Sequence[np.ndarray], lam: float = 1.0):
    """One-vs-all Wasserstein matching.

    For each domain the coupling is solved on the frozen joint cost and then
    held fixed, so gradients flow through the feature distances only.
    Returns ``(value, [dZ_k])``.
    """
    present = [k for k, Z in enumerate(Zs) if len(Z) > 0]
    if len(present) < len(Zs):
        log.warning("WM: %d domain(s) absent from the batch were skipped", len(Zs) - len(present))
    dZs = [np.zeros_like(np.asarray(Z, dtype=float)) for Z in Zs]
    if len(present) < 2:
        return 0.0, dZs
    value = 0.0
    for k in present:
        others = [j for j in present if j != k]
        A = EmpiricalDistribution(Zs[k], ys[k])
        B = EmpiricalDistribution(np.concatenate([Zs[j] for j in others]),
                                  np.concatenate([ys[j] for j in others]))
        C = cost_matrix_joint(A, B, lam)
        plan = exact_ot(C).plan
        value += float(np.sum(plan * C))
        # d/dz_i sum_ij P_ij ||z_i - z'_j||^2 = 2 (r_i z_i - P z')
        dA = 2.0 * (plan.sum(axis=1)[:, None] * A.Z - plan @ B.Z)
        dB = 2.0 * (plan.sum(axis=0)[:, None] * B.Z - plan.T @ A.Z)
        dZs[k] += dA
        start = 0
        for j in others:
            n_j = len(Zs[j])
            dZs[j] += dB[start:start + n_j]
            start += n_j
    return value, dZs


def make_discriminators(n_domains: int, rep_dim: int, hidden: int = 16, rng=None):
    """Two dense layers per source domain; the output layer starts at zero (outputs 0.5)."""
    rng = np.random.default_rng(rng)
    discs = []
    for _ in range(n_domains):
        W1 = rng.normal(0.0, math.sqrt(2.0 / rep_dim), size=(hidden, rep_dim))
        discs.append([Layer(W1, np.zeros(hidden), "relu"),
                      Layer(np.zeros((1, hidden)), np.zeros(1), "identity")])
    return discs


def _bce_with_logits(s, t):
    # softplus(s) - t s, computed stably
    return np.logaddexp(0.0, s) - t * s


def discriminator_loss(disc, Z, targets):
    """Mean binary cross-entropy of one discriminator.

    Returns ``(loss, layer_grads, dZ)``.
    """
    out, cache = netcore.mlp_forward(disc, Z)
    s = out[:, 0]
    n = Z.shape[0]
    loss = float(np.mean(_bce_with_logits(s, targets)))
    ds = (1.0 / (1.0 + np.exp(-s)) - targets) / n
    grads, dZ = netcore.mlp_backward(disc, cache, ds[:, None])
    return loss, grads, dZ


def g2dm_losses(Zs: Sequence[np.ndarray], discriminators):
    """One-vs-all discriminator losses.

    Discriminator ``k`` labels points of domain ``k`` as 0 and all other
    domains as 1.  Returns ``(adv_loss, per_disc_losses, dZs, disc_grads)``
    where ``adv_loss = -sum_k L_k`` is the representation's term and ``dZs``
    its gradient.
    """
    if len(discriminators) != len(Zs):
        raise InvalidArgument("g2dm needs exactly one discriminator per source domain")
    sizes = [len(Z) for Z in Zs]
    dZs = [np.zeros_like(np.asarray(Z, dtype=float)) for Z in Zs]
    if sum(1 for s in sizes if s > 0) < 2:
        return 0.0, [0.0] * len(Zs), dZs, [None] * len(Zs)
    Zall = np.concatenate(Zs)
    dom = np.repeat(np.arange(len(Zs)), sizes)
    losses, dgrads = [], []
    dZall = np.zeros_like(Zall)
    for k, disc in enumerate(discriminators):
        t = (dom != k).astype(float)
        l_k, grads, dZ = discriminator_loss(disc, Zall, t)
        losses.append(l_k)
        dgrads.append(grads)
        dZall -= dZ
    offsets = np.cumsum([0] + sizes)
    dZs = [dZall[offsets[k]:offsets[k + 1]] for k in range(len(Zs))]
    return -float(sum(losses)), losses, dZs, dgrads


def vrex_loss(risks, beta_vrex: float = 1.0) -> float:
    """Mean risk plus ``beta`` times the population variance of the risks."""
    r = np.asarray(risks, dtype=float)
    if r.size < 1:
        raise InvalidArgument("need at least one domain risk")
    return float(r.mean() + beta_vrex * r.var())


def vrex_weights(risks, beta_vrex: float = 1.0) -> np.ndarray:
    """``d vrex_loss / d risk_k``."""
    r = np.asarray(risks, dtype=float)
    N = r.size
    return 1.0 / N + beta_vrex * 2.0 * (r - r.mean()) / N


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _params_add(a: list, b: list):
    return [x + y for x, y in zip(a, b)]


class Trainer:
    """Mini-batch trainer for vanilla DG methods and DR-DG.

    One batch holds up to ``batch_size`` points from every source domain.
    All randomness comes from one generator seeded by ``cfg.seed``; the full
    state (parameters, discriminators, generator, gamma, perturbation buffer)
    round-trips through :meth:`state_dict` so training can resume exactly.
    """

    def __init__(self, data: DomainDataset, cfg: DRDGConfig, robust: bool = True):
        if not data.domains:
            raise InvalidArgument("need at least one source domain")
        self.data = data
        self.cfg = cfg
        self.robust = robust
        self.names = list(data.domains)
        self.n_classes = int(data.classes.max()) + 1
        self.rng = np.random.default_rng(cfg.seed)
        self.params = netcore.init_params(data.dim, self.n_classes, cfg.hidden, cfg.rep_dim, self.rng)
        self.discs = (make_discriminators(len(self.names), cfg.rep_dim, cfg.dg.disc_hidden, self.rng)
                      if cfg.dg.kind == "g2dm" else [])
        self.epoch = 0
        self.gamma = float(np.clip(cfg.inner.gamma_init, cfg.inner.gamma_min, cfg.inner.gamma_max))
        self.delta = [np.zeros((len(data.domains[k]), cfg.rep_dim)) for k in self.names]
        self.history: list[dict] = []

    # -- objective pieces ----------------------------------------------------

    def _dg_grads(self, Zs, ys, include_cls: bool):
        """Value and gradients of the DG objective on clean representations."""
        dg = self.cfg.dg
        W = self.params.head_W
        dZs = [np.zeros_like(Z) for Z in Zs]
        dW = np.zeros_like(W)
        db = np.zeros_like(self.params.head_b)
        value = 0.0
        disc_grads = None
        n_total = sum(len(Z) for Z in Zs)
        if dg.kind == "vrex":
            parts = [netcore.loss_parts(self.params.head, Z, y, "cross_entropy") for Z, y in zip(Zs, ys)]
            risks = [float(p[0].mean()) for p in parts]
            if include_cls:
                value += vrex_loss(risks, dg.beta_vrex)
                wts = vrex_weights(risks, dg.beta_vrex)
            else:
                value += dg.beta_vrex * float(np.var(risks))
                r = np.asarray(risks)
                wts = dg.beta_vrex * 2.0 * (r - r.mean()) / r.size
            for k, ((_, dl), Z) in enumerate(zip(parts, Zs)):
                dl = dl * (wts[k] / len(Z))
                gW, gb = netcore.head_grads(Z, dl)
                dW += gW
                db += gb
                dZs[k] += dl @ W
        elif include_cls:
            Zall = np.concatenate(Zs)
            yall = np.concatenate(ys)
            losses, dl = netcore.loss_parts(self.params.head, Zall, yall, "cross_entropy")
            value += float(losses.mean())
            dl = dl / n_total
            dW, db = netcore.head_grads(Zall, dl)
            dZall = dl @ W
            off = 0
            for k, Z in enumerate(Zs):
                dZs[k] += dZall[off:off + len(Z)]
                off += len(Z)
        if dg.kind == "wm":
            v, g = wm_loss(Zs, ys, dg.lam)
            value += dg.wm_weight * v
            dZs = [a + dg.wm_weight * b for a, b in zip(dZs, g)]
        elif dg.kind == "g2dm":
            v, _, g, disc_grads = g2dm_losses(Zs, self.discs)
            value += v
            dZs = [a + b for a, b in zip(dZs, g)]
        return value, dZs, dW, db, disc_grads

    def _dro_grads(self, Zs, ys, idxs, rho):
        """Ascent on buffered perturbations, gamma update, and the loss at the result."""
        inner = self.cfg.inner
        track = inner.track_perturbations
        Z0 = np.concatenate(Zs)
        yall = np.concatenate(ys)
        start = np.concatenate([
            Z + (self.delta[k][idx] if track else 0.0) for k, (Z, idx) in enumerate(zip(Zs, idxs))])
        Zp = start
        rho2 = rho * rho
        for _ in range(inner.T2):
            Zp = prox_ascent_step(self.params.head, Zp, Z0, yall, self.gamma, inner.alpha_step,
                                  "cross_entropy")
            msd = float(np.mean(np.sum((Zp - Z0) ** 2, axis=1)))
            self.gamma = float(np.clip(self.gamma - inner.beta_step * (rho2 - msd),
                                       inner.gamma_min, inner.gamma_max))
        off = 0
        for k, idx in enumerate(idxs):
            self.delta[k][idx] = Zp[off:off + len(idx)] - Z0[off:off + len(idx)]
            off += len(idx)
        losses, dl = netcore.loss_parts(self.params.head, Zp, yall, "cross_entropy")
        dl = dl / Zp.shape[0]
        dW, db = netcore.head_grads(Zp, dl)
        dZall = dl @ self.params.head_W  # z' = g(x) + delta, delta held constant
        dZs, off = [], 0
        for Z in Zs:
            dZs.append(dZall[off:off + len(Z)])
            off += len(Z)
        return float(losses.mean()), dZs, dW, db

    # -- epochs --------------------------------------------------------------

    def current_rho_adv(self) -> float:
        pooled = self.data.pooled(self.names)
        X, y = pooled.X, pooled.y
        if len(y) > self.cfg.adv_sample:
            sel = np.sort(np.random.default_rng(self.cfg.seed + 1).choice(
                len(y), self.cfg.adv_sample, replace=False))
            X, y = X[sel], y[sel]
        Z = netcore.forward_rep(self.params, X)
        adv = gen_adv_distribution(self.params.head, Z, y)
        return rho_adv(Z, y, adv)

    def run_epoch(self) -> dict:
        cfg = self.cfg
        rho_unit, rho = float("nan"), 0.0
        if self.robust and cfg.F > 0:
            try:
                rho_unit = self.current_rho_adv()
            except DegenerateHead as exc:
                log.warning("epoch %d skipped: %s", self.epoch + 1, exc)
                self.epoch += 1
                row = {"epoch": self.epoch, "source_loss": float("nan"), "dg_loss": float("nan"),
                       "dro_loss": float("nan"), "rho_adv": float("nan"), "gamma": self.gamma}
                self.history.append(row)
                return row
            rho = cfg.F * rho_unit
        # at rho = 0 the ball is a point: skip the ascent so F = 0 is exactly vanilla training
        use_dro = self.robust and rho > 0
        include_cls = not (use_dro and cfg.dg_term == "regularizer")

        perms = [self.rng.permutation(len(self.data.domains[k])) for k in self.names]
        n_steps = math.ceil(max(len(p) for p in perms) / cfg.batch_size)
        src_sum = dg_sum = dro_sum = 0.0
        for s in range(n_steps):
            idxs = [p[s * cfg.batch_size:(s + 1) * cfg.batch_size] for p in perms]
            Xs = [self.data.domains[k].X[i] for k, i in zip(self.names, idxs)]
            ys = [self.data.domains[k].y[i] for k, i in zip(self.names, idxs)]
            fwd = [netcore.mlp_forward(self.params.layers, X) for X in Xs]
            Zs = [f[0] for f in fwd]
            clean = float(np.mean(netcore.loss(self.params.head, np.concatenate(Zs),
                                               np.concatenate(ys), "cross_entropy")))
            value, dZs, dW, db, disc_grads = self._dg_grads(Zs, ys, include_cls)
            dro = clean
            if use_dro:
                dro, dZd, dWd, dbd = self._dro_grads(Zs, ys, idxs, rho)
                dZs = [a + b for a, b in zip(dZs, dZd)]
                dW, db = dW + dWd, db + dbd
            if not (math.isfinite(value) and math.isfinite(dro)):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {self.epoch + 1}, step {s}: dg={value}, dro={dro}")
            layer_grads = None
            for (Z, cache), dZ in zip(fwd, dZs):
                g, _ = netcore.mlp_backward(self.params.layers, cache, dZ)
                flat = [a for pair in g for a in pair]
                layer_grads = flat if layer_grads is None else _params_add(layer_grads, flat)
            grads = ModelParams(
                [Layer(layer_grads[2 * i], layer_grads[2 * i + 1], l.activation)
                 for i, l in enumerate(self.params.layers)], dW, db)
            self.params = netcore.sgd_update(self.params, grads, cfg.lr)
            if disc_grads is not None:
                # discriminators descend their own loss, i.e. ascend the min-max objective
                for disc, dg_ in zip(self.discs, disc_grads):
                    if dg_ is None:
                        continue
                    for layer, (gW, gb) in zip(disc, dg_):
                        layer.W = layer.W - cfg.lr * gW
                        layer.b = layer.b - cfg.lr * gb
            src_sum += clean
            dg_sum += value
            dro_sum += dro
        self.epoch += 1
        row = {"epoch": self.epoch, "source_loss": src_sum / n_steps, "dg_loss": dg_sum / n_steps,
               "dro_loss": dro_sum / n_steps, "rho_adv": rho_unit, "gamma": self.gamma}
        self.history.append(row)
        log.debug("epoch %(epoch)d source=%(source_loss).4f dg=%(dg_loss).4f dro=%(dro_loss).4f", row)
        return row

    def fit(self, epochs: int | None = None) -> ModelParams:
        target = self.cfg.epochs if epochs is None else epochs
        while self.epoch < target:
            self.run_epoch()
        return self.params

    # -- persistence ---------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "gamma": self.gamma,
            "robust": self.robust,
            "rng": self.rng.bit_generator.state,
            "delta": [d.tolist() for d in self.delta],
            "discriminators": [[{"W": l.W.tolist(), "b": l.b.tolist(), "activation": l.activation}
                                for l in disc] for disc in self.discs],
            "history": self.history,
        }

    def load_state_dict(self, params: ModelParams, state: dict):
        self.params = params.copy()
        self.epoch = int(state["epoch"])
        self.gamma = float(state["gamma"])
        self.robust = bool(state["robust"])
        self.rng.bit_generator.state = state["rng"]
        self.delta = [np.array(d, dtype=float).reshape(-1, self.cfg.rep_dim) for d in state["delta"]]
        self.discs = [[Layer(np.array(l["W"], dtype=float), np.array(l["b"], dtype=float),
                             l["activation"]) for l in disc] for disc in state["discriminators"]]
        self.history = [dict(r) for r in state["history"]]


def vanilla_train(data: DomainDataset, dg: DGMethod, lr: float = 0.05, epochs: int = 100,
                  seed: int = 0, history: list | None = None, **kwargs) -> ModelParams:
    """Train with a DG objective alone.  Per-epoch rows are appended to ``history``."""
    cfg = DRDGConfig(F=0.0, lr=lr, epochs=epochs, dg=dg, seed=seed, **kwargs)
    trainer = Trainer(data, cfg, robust=False)
    params = trainer.fit()
    if history is not None:
        history.extend(trainer.history)
    return params


def dr_dg_train(data: DomainDataset, cfg: DRDGConfig, history: list | None = None) -> ModelParams:
    """DR-DG: the DG objective plus the loss at worst-case perturbed representations."""
    trainer = Trainer(data, cfg, robust=True)
    params = trainer.fit()
    if history is not None:
        history.extend(trainer.history)
    return params


def write_log_csv(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: repr(float(row[k])) if k != "epoch" else int(row[k]) for k in LOG_COLUMNS})
