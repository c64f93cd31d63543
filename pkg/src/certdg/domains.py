"""Synthetic multi-domain datasets.

Domains are rotations of one 2-D base task about the origin (the vector
analogue of rotated digits).  Unseen "corrupted" domains come from five
parameterised corruption families with severities 1-5.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, ParseError

CORRUPTIONS = ("gauss_noise", "shift", "scale", "shear", "blend_constant")


@dataclass
class Domain:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if self.X.shape[0] != self.y.shape[0]:
            raise InvalidArgument("every point needs exactly one label")

    def __len__(self):
        return self.X.shape[0]


@dataclass
class DomainDataset:
    domains: dict[str, Domain]
    meta: dict[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        dims = {d.X.shape[1] for d in self.domains.values()}
        if len(dims) > 1:
            raise InvalidArgument(f"domains disagree on dimension: {sorted(dims)}")

    @property
    def dim(self) -> int:
        return next(iter(self.domains.values())).X.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(np.concatenate([d.y for d in self.domains.values()]))

    def subset(self, names) -> "DomainDataset":
        return DomainDataset({k: self.domains[k] for k in names},
                             {k: self.meta[k] for k in names if k in self.meta})

    def pooled(self, names=None) -> Domain:
        names = list(self.domains) if names is None else list(names)
        return Domain(np.concatenate([self.domains[k].X for k in names]),
                      np.concatenate([self.domains[k].y for k in names]))


def rotation(angle_deg: float) -> np.ndarray:
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s], [s, c]])


def make_base(n: int, kind: str = "blobs", noise: float = 0.5, separation: float = 2.0,
              rng=None) -> Domain:
    """Balanced two-class base task in the plane."""
    rng = np.random.default_rng(rng)
    if n < 2:
        raise InvalidArgument("need at least one point per class")
    y = np.arange(n) % 2
    if kind == "blobs":
        centers = np.array([[-separation, 0.0], [separation, 0.0]])
        X = centers[y] + noise * rng.standard_normal((n, 2))
    elif kind == "arcs":
        t = rng.uniform(0.0, math.pi, n)
        X = np.where(y[:, None] == 0,
                     np.column_stack([np.cos(t), np.sin(t)]),
                     np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)]))
        X = separation * (X - [0.5, 0.25]) + noise * rng.standard_normal((n, 2))
    else:
        raise InvalidArgument(f"unknown base task {kind!r}")
    return Domain(X, y)


def make_rotated_task(n_per_domain: int, angles_deg, noise: float = 0.5, seed: int = 0,
                      kind: str = "blobs", separation: float = 2.0) -> DomainDataset:
    """One domain per angle: the same base sample rotated about the origin."""
    if n_per_domain < 2:
        raise InvalidArgument("n_per_domain must be at least the number of classes (2)")
    base = make_base(n_per_domain, kind, noise, separation, rng=seed)
    domains, meta = {}, {}
    for angle in angles_deg:
        if not math.isfinite(angle):
            raise InvalidArgument("angles must be finite")
        name = f"rot{angle:g}"
        domains[name] = Domain(base.X @ rotation(angle).T, base.y.copy())
        meta[name] = {"base": kind, "angle": float(angle), "corruption": None, "severity": 0}
    return DomainDataset(domains, meta)


def apply_corruption(domain: Domain, kind: str, severity: int, seed: int = 0) -> Domain:
    """Corrupt the features of ``domain``; labels and counts are untouched.

    Severity ``s`` scales each family's parameter linearly:

    - ``gauss_noise``: additive noise with sigma ``0.05 s``
    - ``shift``: translation by a fixed random direction of norm ``0.1 s``
    - ``scale``: multiplication by ``1 + 0.1 s``
    - ``shear``: ``x0 += 0.1 s * x1``
    - ``blend_constant``: ``(1 - 0.1 s) x + 0.1 s * c`` towards ``c = (1, ..., 1)``
    """
    if kind not in CORRUPTIONS:
        raise InvalidArgument(f"unknown corruption {kind!r}; choose from {CORRUPTIONS}")
    if int(severity) != severity or not 1 <= severity <= 5:
        raise InvalidArgument("severity must be an integer in 1..5")
    rng = np.random.default_rng(seed)
    X = domain.X.copy()
    s = float(severity)
    if kind == "gauss_noise":
        X = X + 0.05 * s * rng.standard_normal(X.shape)
    elif kind == "shift":
        u = rng.standard_normal(X.shape[1])
        X = X + 0.1 * s * u / np.linalg.norm(u)
    elif kind == "scale":
        X = X * (1.0 + 0.1 * s)
    elif kind == "shear":
        if X.shape[1] < 2:
            raise InvalidArgument("shear needs at least two features")
        X[:, 0] = X[:, 0] + 0.1 * s * X[:, 1]
    else:
        X = (1.0 - 0.1 * s) * X + 0.1 * s * np.ones(X.shape[1])
    return Domain(X, domain.y.copy())


def split(dataset: DomainDataset, train_fraction: float, seed: int = 0):
    """Stratified (per domain, per class) train/test split."""
    if not 0 < train_fraction < 1:
        raise InvalidArgument("train_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    train, test = {}, {}
    for name, dom in dataset.domains.items():
        tr_idx, te_idx = [], []
        for c in np.unique(dom.y):
            idx = np.flatnonzero(dom.y == c)
            if idx.size < 2:
                raise InvalidArgument(f"class {c} in domain {name} has fewer than 2 points")
            idx = rng.permutation(idx)
            k = min(max(int(round(train_fraction * idx.size)), 1), idx.size - 1)
            tr_idx.append(idx[:k])
            te_idx.append(idx[k:])
        tr = np.sort(np.concatenate(tr_idx))
        te = np.sort(np.concatenate(te_idx))
        train[name] = Domain(dom.X[tr], dom.y[tr])
        test[name] = Domain(dom.X[te], dom.y[te])
    return DomainDataset(train, dict(dataset.meta)), DomainDataset(test, dict(dataset.meta))


def csv_text(dataset: DomainDataset) -> str:
    """``domain,label,x0,...`` rows; floats use ``repr`` for an exact round trip."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["domain", "label"] + [f"x{j}" for j in range(dataset.dim)])
    for name, dom in dataset.domains.items():
        for x, lab in zip(dom.X, dom.y):
            w.writerow([name, int(lab)] + [repr(float(v)) for v in x])
    return buf.getvalue()


def save_csv(dataset: DomainDataset, path):
    with open(path, "w", newline="") as fh:
        fh.write(csv_text(dataset))


def load_csv(path) -> DomainDataset:
    rows: dict[str, tuple[list, list]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ParseError("empty file", 1)
        if len(header) < 3 or header[:2] != ["domain", "label"] or header[2:] != [
                f"x{j}" for j in range(len(header) - 2)]:
            raise ParseError(f"bad header {header!r}", 1)
        d = len(header) - 2
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 2:
                raise ParseError(f"expected {d + 2} fields, found {len(row)}", lineno)
            try:
                lab = int(row[1])
                x = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from exc
            if lab < 0 or not all(math.isfinite(v) for v in x):
                raise ParseError("labels must be non-negative and features finite", lineno)
            xs, ys = rows.setdefault(row[0], ([], []))
            xs.append(x)
            ys.append(lab)
    if not rows:
        raise ParseError("no data rows", 2)
    return DomainDataset({k: Domain(np.array(xs), np.array(ys)) for k, (xs, ys) in rows.items()})


def save_domain_csvs(dataset: DomainDataset, out_dir) -> list[Path]:
    """One CSV per domain, named ``<domain>.csv``."""
    out_dir = Path(out_dir)
    paths = []
    for name in dataset.domains:
        p = out_dir / f"{name}.csv"
        save_csv(dataset.subset([name]), p)
        paths.append(p)
    return paths
