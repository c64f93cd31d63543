"""Command-line front end: ``certdg <command> --config run.json [--out DIR]``.

Commands: gen-data, train, certify, attack, evaluate, report.
Exit codes: 0 success, 1 domain or I/O error, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from . import netcore, report
from .adversarial import pgd_input, pgd_rep
from .certify import CSV_COLUMNS, CertConfig, cert_sweep
from .dgtrain import LOG_COLUMNS, DGMethod, DRDGConfig, Trainer
from .domains import CORRUPTIONS, DomainDataset, load_csv, make_rotated_task, split
from .domains import csv_text as domain_csv_text
from .errors import CertDGError
from .experiment import EVAL_COLUMNS, SourceReference, TaskConfig, evaluate

log = logging.getLogger("certdg")

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_nonneg_int = {"type": "integer", "minimum": 0}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


CONFIG_SCHEMA = _obj({
    "seed": _nonneg_int,
    "out": {"type": "string"},
    "task": _obj({
        "n_per_domain": {"type": "integer", "minimum": 2},
        "source_angles": {"type": "array", "items": _num, "minItems": 1},
        "unseen_angles": {"type": "array", "items": _num},
        "noise": {"type": "number", "minimum": 0},
        "separation": {"type": "number", "exclusiveMinimum": 0},
        "kind": {"enum": ["blobs", "arcs"]},
        "train_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    }),
    "model": _obj({
        "hidden": {"type": "array", "items": _pos_int},
        "rep_dim": _pos_int,
    }),
    "train": _obj({
        "method": {"enum": ["erm", "wm", "g2dm", "vrex"]},
        "robust": {"type": "boolean"},
        "F": {"type": "number", "minimum": 0},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "epochs": _nonneg_int,
        "batch_size": _pos_int,
        "dg_term": {"enum": ["full", "regularizer"]},
        "lam": {"type": "number", "minimum": 0},
        "beta_vrex": {"type": "number", "minimum": 0},
        "wm_weight": {"type": "number", "minimum": 0},
        "disc_hidden": _pos_int,
        "adv_sample": _pos_int,
        "inner": {"$ref": "#/$defs/cert"},
    }),
    "certify": {"$ref": "#/$defs/cert"},
    "families": {"type": "array", "minItems": 1,
                 "items": {"enum": ["cross_entropy", "modified_hinge", "zero_one"]}},
    "hinge_alpha": {"type": "number", "exclusiveMinimum": 0},
    "radii": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
    "evaluate": _obj({
        "corruptions": {"type": "array", "items": {"enum": list(CORRUPTIONS)}},
        "severities": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 5}},
        "pgd_eps": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "pgd_steps": _nonneg_int,
    }),
})
CONFIG_SCHEMA["$defs"] = {"cert": _obj({
    "T1": _nonneg_int, "T2": _nonneg_int, "alpha_step": _num, "beta_step": _num,
    "gamma_init": _num, "gamma_min": _num, "gamma_max": _num, "batch": _pos_int,
    "track_perturbations": {"type": "boolean"}, "gap_tol": _num, "refine_gamma": {"type": "boolean"},
    "polish_iters": _nonneg_int, "divergence_cap": _num,
})}

DEFAULTS = {
    "seed": 0,
    "out": "run",
    "task": {"n_per_domain": 400, "source_angles": [0, 15], "unseen_angles": [30, 45, 60, 75],
             "noise": 0.5, "separation": 2.0, "kind": "blobs", "train_fraction": 0.8},
    "model": {"hidden": [16, 16], "rep_dim": 2},
    "train": {"method": "wm", "robust": False, "F": 0.5, "lr": 0.05, "epochs": 100,
              "batch_size": 64, "dg_term": "full", "lam": 1.0, "beta_vrex": 1.0, "wm_weight": 1.0,
              "disc_hidden": 16, "adv_sample": 1000, "inner": {}},
    "certify": {},
    "families": ["cross_entropy", "modified_hinge", "zero_one"],
    "hinge_alpha": 0.1,
    "radii": [0, 0.125, 0.25, 0.375, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0],
    "evaluate": {"corruptions": list(CORRUPTIONS), "severities": [1, 2, 3, 4, 5],
                 "pgd_eps": [0.1, 0.25, 0.5], "pgd_steps": 20},
}


class UsageError(Exception):
    pass


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_config(path=None, seed=None, out=None) -> dict:
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"config error at '{where}': {exc.message}") from exc
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = str(out)
    return cfg


# -- config -> objects --------------------------------------------------------

def task_from(cfg) -> TaskConfig:
    t = cfg["task"]
    return TaskConfig(t["n_per_domain"], tuple(t["source_angles"]), tuple(t["unseen_angles"]),
                      t["noise"], t["separation"], t["kind"], t["train_fraction"], cfg["seed"])


def cert_cfg_from(d: dict, seed: int) -> CertConfig:
    try:
        return CertConfig(**{**d, "seed": seed})
    except CertDGError as exc:
        raise UsageError(f"config error in certification settings: {exc}") from exc


def train_cfg_from(cfg) -> DRDGConfig:
    t = cfg["train"]
    dg = DGMethod(t["method"], t["lam"], t["beta_vrex"], t["wm_weight"], t["disc_hidden"])
    return DRDGConfig(F=t["F"] if t["robust"] else 0.0, lr=t["lr"], epochs=t["epochs"], dg=dg,
                      inner=cert_cfg_from(t["inner"], cfg["seed"]), batch_size=t["batch_size"],
                      seed=cfg["seed"], hidden=tuple(cfg["model"]["hidden"]),
                      rep_dim=cfg["model"]["rep_dim"], dg_term=t["dg_term"],
                      adv_sample=t["adv_sample"])


# -- output helpers -----------------------------------------------------------

def atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r[c]) for c in columns])
    return buf.getvalue()


def json_text(obj) -> str:
    def fix(o):
        if isinstance(o, float) and not math.isfinite(o):
            return None if math.isnan(o) else ("inf" if o > 0 else "-inf")
        if isinstance(o, dict):
            return {k: fix(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [fix(v) for v in o]
        if isinstance(o, np.generic):
            return fix(o.item())
        return o
    return json.dumps(fix(obj), sort_keys=True, indent=1) + "\n"


def read_csv_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- data ---------------------------------------------------------------------

def _data_dir(out: Path) -> Path:
    return out / "data"


def load_or_build(cfg):
    """``(train, test)``: from the generated CSVs when present, regenerated otherwise."""
    task = task_from(cfg)
    ddir = _data_dir(Path(cfg["out"]))
    manifest = ddir / "manifest.json"
    if manifest.exists():
        info = json.loads(manifest.read_text())
        domains, meta = {}, {}
        for name in info["domains"]:
            ds = load_csv(ddir / f"{name}.csv")
            domains[name] = ds.domains[name]
            meta[name] = info["meta"][name]
        data = DomainDataset(domains, meta)
        return split(data, task.train_fraction, task.seed)
    return task.build()


def cmd_gen_data(cfg, args) -> int:
    task = task_from(cfg)
    angles = list(task.source_angles) + list(task.unseen_angles)
    data = make_rotated_task(task.n_per_domain, angles, task.noise, task.seed, task.kind,
                             task.separation)
    ddir = _data_dir(Path(cfg["out"]))
    for name in data.domains:
        atomic_write(ddir / f"{name}.csv", domain_csv_text(data.subset([name])))
    manifest = {"domains": list(data.domains), "meta": data.meta,
                "sources": task.source_names, "unseen": task.unseen_names,
                "counts": {k: len(v) for k, v in data.domains.items()}, "seed": task.seed,
                "task": cfg["task"]}
    atomic_write(ddir / "manifest.json", json_text(manifest))
    print(f"wrote {len(data.domains)} domain files to {ddir}")
    return 0


def _checkpoint_path(cfg, args) -> Path:
    return Path(args.checkpoint) if getattr(args, "checkpoint", None) else Path(cfg["out"]) / "model.json"


def cmd_train(cfg, args) -> int:
    task = task_from(cfg)
    train, _ = load_or_build(cfg)
    src = train.subset(task.source_names)
    tcfg = train_cfg_from(cfg)
    trainer = Trainer(src, tcfg, robust=cfg["train"]["robust"])
    if args.resume:
        params, extra = netcore.load_checkpoint(args.resume, with_extra=True)
        if not extra or "trainer" not in extra:
            raise CertDGError(f"{args.resume}: checkpoint carries no training state")
        trainer.load_state_dict(params, extra["trainer"])
    target = tcfg.epochs if args.until_epoch is None else min(args.until_epoch, tcfg.epochs)
    trainer.fit(target)
    out = Path(cfg["out"])
    ckpt = _checkpoint_path(cfg, args)
    atomic_write(ckpt, netcore.checkpoint_text(
        trainer.params, extra={"trainer": trainer.state_dict(),
                                 "config": {k: v for k, v in cfg.items() if k != "out"}}))
    atomic_write(out / "train_log.csv", csv_text(LOG_COLUMNS, trainer.history))
    acc = float(np.mean(netcore.predict(trainer.params, src.pooled().X) == src.pooled().y))
    print(f"trained {trainer.epoch} epochs; source train accuracy {acc:.4f}; checkpoint {ckpt}")
    return 0


def _load_model(cfg, args):
    path = _checkpoint_path(cfg, args)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return netcore.load_checkpoint(path)


def cmd_certify(cfg, args) -> int:
    params = _load_model(cfg, args)
    task = task_from(cfg)
    _, test = load_or_build(cfg)
    ref = SourceReference.from_params(params, test.pooled(task.source_names))
    ccfg = cert_cfg_from(cfg["certify"], cfg["seed"])
    radii = sorted(float(r) for r in cfg["radii"])
    rows, records = [], []
    for fam in cfg["families"]:
        family = netcore.LossFamily(fam, cfg["hinge_alpha"]) if fam == "modified_hinge" else fam
        certs = cert_sweep(params.head, ref.Z, ref.y, [r * ref.unit for r in radii], ccfg,
                           family=family, unit=ref.unit)
        for c in certs:
            rows.append(c.csv_row())
            records.append(c.to_dict())
    out = Path(cfg["out"])
    atomic_write(out / "sweep.csv", csv_text(CSV_COLUMNS, rows))
    atomic_write(out / "certificates.json", json_text({"rho_adv": ref.unit, "certificates": records}))
    bad = sum(1 for r in rows if not r["converged"])
    print(f"{len(rows)} certificates ({bad} flagged not converged); rho_adv = {ref.unit:.6g}")
    return 0


ATTACK_COLUMNS = ["space", "eps", "loss", "accuracy", "mean_distortion"]


def cmd_attack(cfg, args) -> int:
    params = _load_model(cfg, args)
    task = task_from(cfg)
    _, test = load_or_build(cfg)
    src = test.pooled(task.source_names)
    Z = netcore.forward_rep(params, src.X)
    steps = cfg["evaluate"]["pgd_steps"]
    rows = []
    for eps in [0.0] + [float(e) for e in cfg["evaluate"]["pgd_eps"]]:
        Zr = pgd_rep(params.head, Z, src.y, eps, steps=steps)
        Xi = pgd_input(params, src.X, src.y, eps, steps=steps)
        Zi = netcore.forward_rep(params, Xi)
        for space, Zp, dist in (("representation", Zr, Zr - Z), ("input", Zi, Xi - src.X)):
            rows.append({"space": space, "eps": eps,
                         "loss": float(np.mean(netcore.loss(params.head, Zp, src.y))),
                         "accuracy": float(np.mean(np.argmax(netcore.logits(params.head, Zp), 1) == src.y)),
                         "mean_distortion": float(np.mean(np.linalg.norm(dist, axis=1)))})
    atomic_write(Path(cfg["out"]) / "attack.csv", csv_text(ATTACK_COLUMNS, rows))
    print(f"wrote {len(rows)} attack rows")
    return 0


def cmd_evaluate(cfg, args) -> int:
    params = _load_model(cfg, args)
    task = task_from(cfg)
    _, test = load_or_build(cfg)
    ev = cfg["evaluate"]
    rows, ref = evaluate(params, test, task.source_names, task.unseen_names, ev["corruptions"],
                         ev["severities"], ev["pgd_eps"], ev["pgd_steps"], seed=cfg["seed"])
    atomic_write(Path(cfg["out"]) / "eval.csv", csv_text(EVAL_COLUMNS, rows))
    print(f"wrote {len(rows)} evaluation rows; rho_adv = {ref.unit:.6g}")
    return 0


def cmd_report(cfg, args) -> int:
    out = Path(cfg["out"])
    sweep_path = Path(args.sweep) if args.sweep else out / "sweep.csv"
    eval_path = Path(args.eval) if args.eval else out / "eval.csv"
    sweep = read_csv_rows(sweep_path)
    evals = read_csv_rows(eval_path) if eval_path.exists() else []
    curves = report.curves_from_sweep(sweep)
    atomic_write(out / "report.svg", report.render_svg(curves, evals))
    md, violations = report.render_markdown(curves, evals)
    atomic_write(out / "report.md", md)
    print(f"report written to {out}; {violations} point(s) above the certified curve")
    return 1 if violations else 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "certify": cmd_certify,
            "attack": cmd_attack, "evaluate": cmd_evaluate, "report": cmd_report}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps a subcommand's parser from resetting flags given before it
    S = argparse.SUPPRESS
    common.add_argument("--config", default=S, help="run configuration (JSON)")
    common.add_argument("--seed", type=int, default=S, help="override the config seed")
    common.add_argument("--out", default=S, help="output directory (overrides the config)")
    common.add_argument("--threads", type=int, default=S, help="BLAS threads (default 1)")
    common.add_argument("-v", "--verbose", action="store_true", default=S)
    p = _Parser(prog="certdg", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common], help="generate per-domain CSVs")
    t = sub.add_parser("train", parents=[common], help="train a model (vanilla or DR-DG)")
    t.add_argument("--checkpoint", help="checkpoint path (default OUT/model.json)")
    t.add_argument("--resume", help="continue from this checkpoint")
    t.add_argument("--until-epoch", type=int, help="stop after this epoch")
    for name, text in (("certify", "certificate sweep over the radii grid"),
                       ("attack", "PGD table in input and representation space"),
                       ("evaluate", "loss/accuracy per distribution vs normalised distance")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--checkpoint", help="checkpoint path (default OUT/model.json)")
    r = sub.add_parser("report", parents=[common], help="SVG overlay and Markdown summary")
    r.add_argument("--sweep", help="sweep CSV (default OUT/sweep.csv)")
    r.add_argument("--eval", help="evaluation CSV (default OUT/eval.csv)")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        for name, default in (("config", None), ("seed", None), ("out", None), ("threads", 1),
                              ("verbose", False)):
            if not hasattr(args, name):
                setattr(args, name, default)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.config, args.seed, args.out)
    except UsageError as exc:
        print(f"certdg: usage error: {exc}", file=sys.stderr)
        return 2
    try:
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"certdg: usage error: {exc}", file=sys.stderr)
        return 2
    except (CertDGError, OSError, ValueError, KeyError) as exc:
        print(f"certdg: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
