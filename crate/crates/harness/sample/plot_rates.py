#!/usr/bin/env python3
"""Render log-log rate figures as SVG from <exp>_fits.csv and <exp>_fit_points.csv.

Usage: python3 plot_rates.py [DIR]

DIR defaults to the directory holding this script. One <exp>_rates.svg is
written per <exp>_fits.csv found. Standard library only.
"""
import csv
import glob
import math
import os
import sys
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 720, 480
LEFT, RIGHT, TOP, BOTTOM = 80, 220, 40, 60
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]
XLABELS = {"two_minus_alpha": "2 - alpha", "alpha_gap": "|theta - alpha|", "dimension": "d"}


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def decades(lo, hi):
    a, b = math.floor(lo), math.ceil(hi)
    if a == b:
        b = a + 1
    return a, b


def render(fits, points):
    groups = {}
    for p in points:
        x, y = float(p["abscissa"]), float(p["w1"])
        se = float(p["stderr"]) if p["stderr"] else 0.0
        if x > 0 and y > 0:
            groups.setdefault(p["label"], []).append((x, y, se))
    fits = [f for f in fits if f["label"] in groups]
    if not fits:
        return None
    lx = [math.log10(x) for g in groups.values() for x, _, _ in g]
    ly = [math.log10(y) for g in groups.values() for _, y, _ in g]
    x0, x1 = decades(min(lx) - 0.05, max(lx) + 0.05)
    y0, y1 = decades(min(ly) - 0.1, max(ly) + 0.1)
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(v):
        return LEFT + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return TOP + (y1 - v) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for k in range(x0, x1 + 1):
        x = sx(k)
        out.append(f'<line x1="{x:.2f}" y1="{TOP}" x2="{x:.2f}" y2="{TOP + ph}" stroke="#ddd"/>')
        out.append(f'<text x="{x:.2f}" y="{TOP + ph + 18}" text-anchor="middle">1e{k}</text>')
    for k in range(y0, y1 + 1):
        y = sy(k)
        out.append(f'<line x1="{LEFT}" y1="{y:.2f}" x2="{LEFT + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{LEFT - 8}" y="{y + 4:.2f}" text-anchor="end">1e{k}</text>')
    kind = fits[0]["abscissa_kind"]
    out.append(
        f'<text x="{LEFT + pw / 2:.2f}" y="{HEIGHT - 15}" text-anchor="middle">{escape(XLABELS.get(kind, kind))}</text>'
    )
    out.append(
        f'<text x="20" y="{TOP + ph / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 20 {TOP + ph / 2:.2f})">W1</text>'
    )
    for i, f in enumerate(fits):
        color = COLORS[i % len(COLORS)]
        pts = groups[f["label"]]
        slope, icpt = float(f["slope"]), float(f["intercept"])
        xs = [math.log(x) for x, _, _ in pts]
        a, b = min(xs), max(xs)
        ya = (icpt + slope * a) / math.log(10)
        yb = (icpt + slope * b) / math.log(10)
        out.append(
            f'<line x1="{sx(a / math.log(10)):.2f}" y1="{sy(ya):.2f}" x2="{sx(b / math.log(10)):.2f}" '
            f'y2="{sy(yb):.2f}" stroke="{color}" stroke-width="1.5"/>'
        )
        for x, y, se in pts:
            cx, cy = sx(math.log10(x)), sy(math.log10(y))
            if 0 < se < y:
                out.append(
                    f'<line x1="{cx:.2f}" y1="{sy(math.log10(y + se)):.2f}" x2="{cx:.2f}" '
                    f'y2="{sy(math.log10(y - se)):.2f}" stroke="{color}"/>'
                )
            out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="3.5" fill="{color}"/>')
        ly_ = TOP + 14 + 36 * i
        lab = escape(f["label"])
        ci = f'slope {slope:.3f} [{float(f["slope_lo"]):.3f}, {float(f["slope_hi"]):.3f}]'
        out.append(f'<circle cx="{LEFT + pw + 16}" cy="{ly_ - 4}" r="3.5" fill="{color}"/>')
        out.append(f'<text x="{LEFT + pw + 26}" y="{ly_}">{lab}</text>')
        out.append(f'<text x="{LEFT + pw + 26}" y="{ly_ + 15}" font-size="10">{ci}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def main(argv):
    base = argv[1] if len(argv) > 1 else os.path.dirname(os.path.abspath(__file__))
    written = []
    for fits_path in sorted(glob.glob(os.path.join(base, "*_fits.csv"))):
        exp = os.path.basename(fits_path)[: -len("_fits.csv")]
        points_path = os.path.join(base, exp + "_fit_points.csv")
        if not os.path.exists(points_path):
            continue
        svg = render(read_rows(fits_path), read_rows(points_path))
        if svg is None:
            continue
        target = os.path.join(base, exp + "_rates.svg")
        with open(target, "w") as f:
            f.write(svg)
        written.append(target)
    for w in written:
        print(w)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
