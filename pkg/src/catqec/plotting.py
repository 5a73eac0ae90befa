"""SVG figures from result CSV files (matplotlib, deterministic output)."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import InsufficientData, MissingColumn  # noqa: E402

REQUIRED = {
    "fig3c": ("gate", "alpha2", "p_bit_cat", "p_Z_cat"),
    "fig4": ("q", "dZ", "rate", "ci_low", "ci_high"),
    "fig5b": ("envelope", "alpha2", "coherent_error"),
    "fig6": ("q", "alpha2", "p_Z", "eta"),
    "fig7": ("target", "x", "eta", "qubits"),
    "fig8": ("kind", "echo", "t", "gamma", "gamma_stderr", "analytic"),
    "fig9": ("kappa_ratio", "duty", "exponent"),
    "fig11c": ("family", "d", "p_Z", "rate"),
}
KINDS = tuple(REQUIRED)


def read_rows(paths: Sequence) -> List[Dict[str, str]]:
    rows = []
    for p in paths:
        with open(p, newline="") as fh:
            rows.extend(csv.DictReader(fh))
    return rows


def _num(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return math.nan


def _check(kind, rows):
    if kind not in REQUIRED:
        raise ValueError(f"unknown figure kind {kind!r}; choose from {KINDS}")
    if not rows:
        raise InsufficientData("no input rows")
    missing = [c for c in REQUIRED[kind] if c not in rows[0]]
    if missing:
        raise MissingColumn(f"{kind} needs columns {missing}")


def _group(rows, key):
    g = defaultdict(list)
    for r in rows:
        g[r[key]].append(r)
    return dict(sorted(g.items(), key=lambda kv: (_num(kv[0]), kv[0])))


def _xy(rows, x, y):
    pts = sorted((_num(r[x]), _num(r[y])) for r in rows)
    return np.array([p[0] for p in pts]), np.array([p[1] for p in pts])


def _fig3c(ax, rows, extra):
    for gate, rs in _group(rows, "gate").items():
        x, pb = _xy(rs, "alpha2", "p_bit_cat")
        _, pz = _xy(rs, "alpha2", "p_Z_cat")
        ax.plot(x, pb, "o-", label=f"{gate} bit flip")
        ax.plot(x, pz, "s--", label=f"{gate} Z")
    ax.set_yscale("log")
    ax.set_xlabel("|alpha|^2")
    ax.set_ylabel("cat error probability")


def _fig4(ax, rows, extra):
    for dZ, rs in _group(rows, "dZ").items():
        rs = sorted(rs, key=lambda r: _num(r["q"]))
        q = np.array([_num(r["q"]) for r in rs])
        y = np.array([_num(r["rate"]) for r in rs])
        lo = np.array([_num(r["ci_low"]) for r in rs])
        hi = np.array([_num(r["ci_high"]) for r in rs])
        ax.errorbar(q, y, yerr=[np.maximum(y - lo, 0), np.maximum(hi - y, 0)], fmt="o-", capsize=2,
                    label=f"dZ = {dZ}")
    th = extra.get("threshold")
    if th is None and "threshold" in rows[0]:
        th = _num(rows[0]["threshold"])
    if th is not None and np.isfinite(th):
        ax.axvline(th, ls="--", color="k", label=f"threshold {th:.2g}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("q")
    ax.set_ylabel("logical Z error per dZ rounds")


def _fig5b(ax, rows, extra):
    for env, rs in _group(rows, "envelope").items():
        x, y = _xy(rs, "alpha2", "coherent_error")
        ax.plot(x, y, "o-", label=env)
    ax.set_yscale("log")
    ax.set_xlabel("|alpha|^2")
    ax.set_ylabel("CRX coherent error")


def _fig6(ax, rows, extra):
    q = np.array([_num(r["q"]) for r in rows])
    pz = np.array([_num(r["p_Z"]) for r in rows])
    eta = np.array([_num(r["eta"]) for r in rows])
    sc = ax.scatter(pz, eta, c=np.log10(q), cmap="viridis", label="gate points")
    plt.colorbar(sc, ax=ax, label="log10 q")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("p_Z")
    ax.set_ylabel("eta")


def _fig7(ax, rows, extra):
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for k, (target, rs) in enumerate(_group(rows, "target").items()):
        col = colors[k % len(colors)]
        by_eta = _group(rs, "eta")
        curves = {}
        for eta, es in by_eta.items():
            x, y = _xy(es, "x", "qubits")
            curves[_num(eta)] = (x, y)
            unb = not np.isfinite(_num(eta))
            ax.plot(x, y, "-" if unb else "--", color="k" if unb else col,
                    label=f"target {target}, " + ("unbiased" if unb else f"eta {float(eta):.3g}"))
        biased = sorted(e for e in curves if np.isfinite(e))
        lo = [e for e in biased if e <= 1e3 + 1e-9]
        hi = [e for e in biased if e >= 1e4 - 1e-9]
        if lo and hi:
            (x1, y1), (x2, y2) = curves[lo[-1]], curves[hi[0]]
            grid = np.union1d(x1, x2)
            ax.fill_between(grid, np.interp(grid, x1, y1), np.interp(grid, x2, y2), color=col, alpha=0.25,
                            label=f"eta 1e3 to 1e4, target {target}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("p (unbiased) or p_Z (biased)")
    ax.set_ylabel("qubits (2 dX dZ - 1)")


def _fig8(ax, rows, extra):
    for key, rs in _group([dict(r, series=f"{r['kind']} echo={r['echo']}") for r in rows], "series").items():
        x, y = _xy(rs, "t", "gamma")
        _, e = _xy(rs, "t", "gamma_stderr")
        _, a = _xy(rs, "t", "analytic")
        ax.errorbar(x, y, yerr=e, fmt="o", label=f"{key} trajectories")
        ax.plot(x, a, "-", label=f"{key} analytic")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("phase-error exponent")


def _fig9(ax, rows, extra):
    kr = sorted({_num(r["kappa_ratio"]) for r in rows})
    du = sorted({_num(r["duty"]) for r in rows})
    Z = np.full((len(kr), len(du)), np.nan)
    for r in rows:
        Z[kr.index(_num(r["kappa_ratio"])), du.index(_num(r["duty"]))] = _num(r["exponent"])
    mesh = ax.pcolormesh(du, kr, Z, shading="nearest", cmap="magma_r", vmin=0.8, vmax=3.0)
    plt.colorbar(mesh, ax=ax, label="power-law exponent")
    d = np.geomspace(min(du), max(du), 100)
    ax.plot(d, 25.0 / d, "w--", label="product = 25")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_ylim(min(kr) / 1.5, max(kr) * 1.5)
    ax.set_xlabel("duty T_on / T")
    ax.set_ylabel("kappa2 |alpha|^2 / kappa1")


def _fig11c(ax, rows, extra):
    styles = {"CSS_rotated": "o-", "XZZX_unrotated": "s--"}
    for fam, rs in _group(rows, "family").items():
        for d, ds in _group(rs, "d").items():
            x, y = _xy(ds, "p_Z", "rate")
            ok = y > 0
            ax.plot(x[ok], y[ok], styles.get(fam, "^-"), label=f"{fam} d={d}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("p_Z")
    ax.set_ylabel("logical Z error")


_DRAW = {"fig3c": _fig3c, "fig4": _fig4, "fig5b": _fig5b, "fig6": _fig6, "fig7": _fig7,
         "fig8": _fig8, "fig9": _fig9, "fig11c": _fig11c}


def plot(kind: str, inputs: Sequence, out, **extra) -> Path:
    """Render ``kind`` from CSV files (or row dicts) to a self-contained SVG."""
    rows = inputs if inputs and isinstance(inputs[0], dict) else read_rows(inputs)
    rows = [{k: str(v) for k, v in r.items()} for r in rows]
    _check(kind, rows)
    with plt.rc_context({"svg.hashsalt": "catqec", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6, 4.5))
        _DRAW[kind](ax, rows, extra)
        handles, labels = ax.get_legend_handles_labels()
        if handles:
            ax.legend(fontsize=7)
        ax.set_title(kind)
        fig.tight_layout()
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out, format="svg", metadata={"Date": None})
        plt.close(fig)
    return out
