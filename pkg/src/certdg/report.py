"""Static SVG overlay of certified curves and measured losses, plus a Markdown summary.

The SVG is written by hand: a few hundred points and a handful of polylines
do not justify a plotting dependency, and hand-written markup keeps the
bytes deterministic.
"""
from __future__ import annotations

import bisect
import math
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 420
MARGIN = {"left": 60, "right": 150, "top": 30, "bottom": 50}
KIND_COLORS = {
    "source": "#1b9e77", "source_domain": "#1b9e77", "adversarial": "#d95f02",
    "unseen": "#7570b3", "corrupted": "#e7298a", "pgd_rep": "#66a61e", "pgd_input": "#e6ab02",
}
FAMILY_COLORS = {"cross_entropy": "#333333", "modified_hinge": "#1f78b4", "zero_one": "#a6761d"}


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _nice_max(v: float) -> float:
    if not v > 0 or not math.isfinite(v):
        return 1.0
    mag = 10 ** math.floor(math.log10(v))
    for m in (1, 2, 2.5, 5, 10):
        if m * mag >= v:
            return m * mag
    return 10 * mag


def curves_from_sweep(sweep_rows):
    """``{family: [(rho_normalized, worst_case_loss), ...]}`` with NaN rows dropped."""
    out: dict[str, list] = {}
    for r in sweep_rows:
        x, yv = float(r["rho_normalized"]), float(r["worst_case_loss"])
        if math.isfinite(x) and math.isfinite(yv):
            out.setdefault(r["family"], []).append((x, yv))
    for fam in out:
        out[fam].sort()
    return out


def soundness_check(curve, eval_rows, tol=1e-3):
    """Compare every measured point with the certificate at the next grid radius at or above it.

    Certificates are non-decreasing in the radius, so the next radius up is a
    valid bound.  Points beyond the last radius are reported as uncovered.
    Returns a list of ``(domain, rho, loss, bound or None, ok or None)``.
    """
    xs = [c[0] for c in curve]
    out = []
    for r in eval_rows:
        x, loss = float(r["rho_normalized"]), float(r["loss"])
        if not (math.isfinite(x) and math.isfinite(loss)):
            out.append((r["domain"], x, loss, None, None))
            continue
        j = bisect.bisect_left(xs, x - 1e-12)
        if j >= len(xs):
            out.append((r["domain"], x, loss, None, None))
            continue
        bound = curve[j][1]
        out.append((r["domain"], x, loss, bound, loss <= bound + tol))
    return out


def render_svg(curves: dict, eval_rows, title="Loss vs normalised distance") -> str:
    pts = [(float(r["rho_normalized"]), float(r["loss"]), r["kind"]) for r in eval_rows]
    pts = [p for p in pts if math.isfinite(p[0]) and math.isfinite(p[1])]
    xs = [p[0] for p in pts] + [x for c in curves.values() for x, _ in c]
    ys = [p[1] for p in pts] + [v for c in curves.values() for _, v in c]
    xmax = _nice_max(max(xs, default=1.0))
    ymax = _nice_max(max(ys, default=1.0))
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return MARGIN["left"] + pw * x / xmax

    def sy(v):
        return MARGIN["top"] + ph * (1.0 - v / ymax)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2 - MARGIN["right"] / 2:.0f}" y="18" text-anchor="middle" '
           f'font-size="13">{escape(title)}</text>']
    x0, y0 = MARGIN["left"], MARGIN["top"] + ph
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + pw}" y2="{y0}" stroke="black"/>')
    out.append(f'<line x1="{x0}" y1="{MARGIN["top"]}" x2="{x0}" y2="{y0}" stroke="black"/>')
    for i in range(6):
        xv, yv = xmax * i / 5, ymax * i / 5
        out.append(f'<line x1="{_fmt(sx(xv))}" y1="{y0}" x2="{_fmt(sx(xv))}" y2="{y0 + 4}" stroke="black"/>')
        out.append(f'<text x="{_fmt(sx(xv))}" y="{y0 + 16}" text-anchor="middle">{xv:g}</text>')
        out.append(f'<line x1="{x0 - 4}" y1="{_fmt(sy(yv))}" x2="{x0}" y2="{_fmt(sy(yv))}" stroke="black"/>')
        out.append(f'<text x="{x0 - 6}" y="{_fmt(sy(yv) + 4)}" text-anchor="end">{yv:g}</text>')
    out.append(f'<text x="{x0 + pw / 2:.0f}" y="{HEIGHT - 12}" text-anchor="middle">'
               'normalised distance W2 / rho_adv</text>')
    out.append(f'<text x="16" y="{MARGIN["top"] + ph / 2:.0f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.0f})">loss</text>')

    legend = []
    for fam in sorted(curves):
        c = curves[fam]
        color = FAMILY_COLORS.get(fam, "#000000")
        path = " ".join(f"{_fmt(sx(x))},{_fmt(sy(v))}" for x, v in c)
        out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5" '
                   'stroke-dasharray="2,3"/>')
        legend.append((f"certified ({fam})", color, "line"))
    kinds_seen = []
    for x, v, kind in pts:
        color = KIND_COLORS.get(kind, "#555555")
        out.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(v))}" r="3" fill="{color}" '
                   'fill-opacity="0.8"/>')
        if kind not in kinds_seen:
            kinds_seen.append(kind)
    legend += [(k, KIND_COLORS.get(k, "#555555"), "dot") for k in kinds_seen]
    lx = WIDTH - MARGIN["right"] + 12
    for i, (label, color, shape) in enumerate(legend):
        ly = MARGIN["top"] + 14 * i + 6
        if shape == "line":
            out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 16}" y2="{ly}" stroke="{color}" '
                       'stroke-width="1.5" stroke-dasharray="2,3"/>')
        else:
            out.append(f'<circle cx="{lx + 8}" cy="{ly}" r="3" fill="{color}"/>')
        out.append(f'<text x="{lx + 22}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_markdown(curves: dict, eval_rows, family="cross_entropy") -> tuple[str, int]:
    """Summary tables; returns ``(markdown, number_of_violations)``."""
    lines = ["# Certification report", ""]
    for fam in sorted(curves):
        lines += [f"## Certified worst-case loss ({fam})", "", "| rho (normalised) | certified loss |",
                  "|---:|---:|"]
        lines += [f"| {x:.4g} | {v:.6g} |" for x, v in curves[fam]]
        lines.append("")
    violations = 0
    if eval_rows:
        lines += ["## Measured distributions", "",
                  "| domain | kind | rho (normalised) | loss | accuracy | bound | within bound |",
                  "|---|---|---:|---:|---:|---:|:---:|"]
        checks = soundness_check(curves.get(family, []), eval_rows)
        for r, (_, _, _, bound, ok) in zip(eval_rows, checks):
            verdict = "n/a" if ok is None else ("yes" if ok else "NO")
            violations += ok is False
            bstr = "" if bound is None else f"{bound:.6g}"
            lines.append(f"| {r['domain']} | {r['kind']} | {float(r['rho_normalized']):.4g} | "
                         f"{float(r['loss']):.6g} | {float(r['accuracy']):.4g} | {bstr} | {verdict} |")
        lines += ["", f"Points above the certified {family} curve: {violations}", ""]
    return "\n".join(lines), violations
