"""Evaluation tables and the paired vanilla-vs-robust comparison on a rotated task.

Distances are measured between representations: the pooled source test set
is the reference, every other distribution (unseen rotations, corruptions,
PGD-perturbed sets, the adversarial distribution) is placed at
``W2(source, target) / rho_adv`` on the normalised axis.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import netcore
from .adversarial import gen_adv_distribution, pgd_input, pgd_rep, rho_adv
from .certify import CertConfig, Certificate, cert_dg, cert_sweep
from .dgtrain import DRDGConfig, Trainer
from .domains import CORRUPTIONS, Domain, DomainDataset, apply_corruption, make_rotated_task, split
from .errors import InfeasibleTransport
from .transport import EmpiricalDistribution, w2_class_conditional

log = logging.getLogger(__name__)

EVAL_COLUMNS = ["domain", "kind", "rho_raw", "rho_normalized", "loss", "accuracy"]


@dataclass
class TaskConfig:
    n_per_domain: int = 500
    source_angles: tuple = (0.0, 15.0)
    unseen_angles: tuple = (30.0, 45.0, 60.0, 75.0)
    noise: float = 0.5
    separation: float = 2.0
    kind: str = "blobs"
    train_fraction: float = 0.8
    seed: int = 0

    def build(self):
        """``(train, test)`` over all angles; sources and targets are picked by name."""
        angles = list(self.source_angles) + list(self.unseen_angles)
        data = make_rotated_task(self.n_per_domain, angles, self.noise, self.seed, self.kind,
                                 self.separation)
        return split(data, self.train_fraction, self.seed)

    @property
    def source_names(self):
        return [f"rot{a:g}" for a in self.source_angles]

    @property
    def unseen_names(self):
        return [f"rot{a:g}" for a in self.unseen_angles]


@dataclass
class SourceReference:
    """Source test representations and their adversarial unit distance."""
    Z: np.ndarray
    y: np.ndarray
    unit: float
    adv_Z: np.ndarray

    @classmethod
    def from_params(cls, params, source: Domain) -> "SourceReference":
        Z = netcore.forward_rep(params, source.X)
        adv = gen_adv_distribution(params.head, Z, source.y)
        return cls(Z, source.y, rho_adv(Z, source.y, adv), adv.Z)

    def distance(self, Zt, yt, method="auto") -> float:
        try:
            return w2_class_conditional(EmpiricalDistribution(self.Z, self.y),
                                        EmpiricalDistribution(Zt, yt), method=method)
        except InfeasibleTransport as exc:
            log.warning("distance undefined: %s", exc)
            return math.nan


def _row(name, kind, raw, unit, loss, acc):
    norm = raw / unit if unit > 0 else (0.0 if raw == 0 else math.inf)
    return {"domain": name, "kind": kind, "rho_raw": float(raw), "rho_normalized": float(norm),
            "loss": float(loss), "accuracy": float(acc)}


def _score(params, Z, y):
    loss = float(np.mean(netcore.loss(params.head, Z, y, "cross_entropy")))
    acc = float(np.mean(np.argmax(netcore.logits(params.head, Z), axis=1) == y))
    return loss, acc


def evaluate(params, test: DomainDataset, source_names, target_names=(), corruptions=CORRUPTIONS,
             severities=(1, 2, 3, 4, 5), pgd_eps=(), pgd_steps=20, seed=0):
    """Per-distribution loss/accuracy table on the normalised distance axis."""
    source = test.pooled(source_names)
    ref = SourceReference.from_params(params, source)
    rows = []
    loss, acc = _score(params, ref.Z, ref.y)
    rows.append(_row("source", "source", 0.0, ref.unit, loss, acc))
    for name in source_names:
        d = test.domains[name]
        Z = netcore.forward_rep(params, d.X)
        rows.append(_row(name, "source_domain", ref.distance(Z, d.y), ref.unit, *_score(params, Z, d.y)))
    rows.append(_row("P_S_adv", "adversarial", ref.distance(ref.adv_Z, ref.y), ref.unit,
                     *_score(params, ref.adv_Z, ref.y)))
    for name in target_names:
        d = test.domains[name]
        Z = netcore.forward_rep(params, d.X)
        rows.append(_row(name, "unseen", ref.distance(Z, d.y), ref.unit, *_score(params, Z, d.y)))
    for c_i, kind in enumerate(corruptions):
        for s in severities:
            d = apply_corruption(source, kind, s, seed=seed + 1000 * c_i)  # one draw per family
            Z = netcore.forward_rep(params, d.X)
            rows.append(_row(f"{kind}@{s}", "corrupted", ref.distance(Z, d.y), ref.unit,
                             *_score(params, Z, d.y)))
    for eps in pgd_eps:
        Zr = pgd_rep(params.head, ref.Z, ref.y, eps, steps=pgd_steps)
        rows.append(_row(f"pgd_rep@{eps:g}", "pgd_rep", ref.distance(Zr, ref.y), ref.unit,
                         *_score(params, Zr, ref.y)))
        Xi = pgd_input(params, source.X, source.y, eps, steps=pgd_steps)
        Zi = netcore.forward_rep(params, Xi)
        rows.append(_row(f"pgd_input@{eps:g}", "pgd_input", ref.distance(Zi, ref.y), ref.unit,
                         *_score(params, Zi, ref.y)))
    return rows, ref


def target_gaps(params, test: DomainDataset, source_names, target_names, cfg: CertConfig):
    """Certified loss at each target's distance and the gap to its measured loss."""
    ref = SourceReference.from_params(params, test.pooled(source_names))
    out = []
    for name in target_names:
        d = test.domains[name]
        Z = netcore.forward_rep(params, d.X)
        raw = ref.distance(Z, d.y)
        loss, acc = _score(params, Z, d.y)
        cert = cert_dg(params.head, ref.Z, ref.y, raw, cfg, unit=ref.unit)
        out.append({"domain": name, "rho_normalized": raw / ref.unit, "empirical_loss": loss,
                    "certified_loss": cert.worst_case_loss,
                    "gap": cert.worst_case_loss - loss, "accuracy": acc})
    return out


@dataclass
class PairedResult:
    radii: list
    vanilla_certs: list
    robust_certs: list
    vanilla_source_acc: float
    robust_source_acc: float
    vanilla_gaps: list
    robust_gaps: list
    vanilla_history: list = field(default_factory=list)
    robust_history: list = field(default_factory=list)

    @property
    def cert_improved(self) -> list:
        return [r < v for v, r in zip(self.vanilla_certs, self.robust_certs)]

    @property
    def gap_reduced(self) -> list:
        return [r["gap"] < v["gap"] for v, r in zip(self.vanilla_gaps, self.robust_gaps)]

    @property
    def accuracy_drop(self) -> float:
        return 100.0 * (self.vanilla_source_acc - self.robust_source_acc)


def paired_comparison(task: TaskConfig, train_cfg: DRDGConfig, cert_cfg: CertConfig,
                      radii=(0.25, 0.5, 1.0)) -> PairedResult:
    """Train the DG method alone and with DR-DG from the same seed, then certify both."""
    train, test = task.build()
    src = train.subset(task.source_names)
    vanilla = Trainer(src, DRDGConfig(**{**train_cfg.__dict__, "F": 0.0}), robust=False)
    robust = Trainer(src, train_cfg, robust=True)
    pv, pr = vanilla.fit(), robust.fit()
    res = {}
    for tag, p in (("vanilla", pv), ("robust", pr)):
        ref = SourceReference.from_params(p, test.pooled(task.source_names))
        certs = cert_sweep(p.head, ref.Z, ref.y, [r * ref.unit for r in radii], cert_cfg,
                           unit=ref.unit)
        res[tag] = ([c.worst_case_loss for c in certs], _score(p, ref.Z, ref.y)[1],
                    target_gaps(p, test, task.source_names, task.unseen_names, cert_cfg))
    return PairedResult(list(radii), res["vanilla"][0], res["robust"][0], res["vanilla"][1],
                        res["robust"][1], res["vanilla"][2], res["robust"][2],
                        vanilla.history, robust.history)


def certificate_table(certs: list[Certificate]) -> list[dict]:
    return [c.csv_row() for c in certs]
