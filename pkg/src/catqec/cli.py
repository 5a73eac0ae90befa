"""Configuration-driven experiment runner.

Subcommands::

    catqec run <config.json | manifest.json>
    catqec plot <kind> <inputs.csv ...> -o out.svg
    catqec validate <config.json>

Exit codes: 0 success, 1 runtime failure, 2 configuration error.  Failures
print a JSON object ``{"error": <class>, "message": ...}`` on stderr and, when
the output directory is known, write it to ``error.json`` there.  The worker
count comes from ``CATQEC_WORKERS`` and never changes results.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import platform
import sys
import time
from pathlib import Path
from typing import Dict, List

import numpy as np

from . import __version__
from . import analysis as an
from . import code as cd
from . import decode as dc
from . import dynamics as dy
from . import experiments as ex
from . import gates as gt
from . import plotting
from . import pulses as pl
from . import stabilization as st
from .errors import CatQECError, ConfigError

SCHEMA_VERSION = 1
KINDS = ("gate-sim", "dephasing-study", "drag-sweep", "stabilization-study", "qec-sample", "threshold",
         "achievable-map", "overhead")
_GRID_KEYS = {
    "gate-sim": ("q", "alpha2"),
    "dephasing-study": ("times",),
    "drag-sweep": ("envelopes", "alpha2"),
    "stabilization-study": ("kappa_ratios", "duties"),
    "qec-sample": ("points",),
    "threshold": ("q", "dZ"),
    "achievable-map": ("q", "alpha2"),
    "overhead": ("targets", "x"),
}


# ----------------------------------------------------------------------------
# configuration

def validate_config(cfg) -> dict:
    """Check the schema and return a normalized copy; raises ConfigError."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if "config" in cfg and "manifest_version" in cfg:
        cfg = cfg["config"]
    errs = []
    if cfg.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        errs.append(f"unsupported schema_version {cfg.get('schema_version')}")
    kind = cfg.get("experiment")
    if kind not in KINDS:
        errs.append(f"experiment must be one of {list(KINDS)}")
    if "seed" not in cfg:
        errs.append("seed is mandatory")
    elif not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0:
        errs.append("seed must be a non-negative integer")
    shots = cfg.get("shots", 1000)
    if not isinstance(shots, int) or shots < 100:
        errs.append("shots must be an integer >= 100")
    if not isinstance(cfg.get("output_dir", ""), str) or not cfg.get("output_dir"):
        errs.append("output_dir is required")
    params = cfg.get("params", {})
    if not isinstance(params, dict):
        errs.append("params must be an object")
        params = {}
    for key in _GRID_KEYS.get(kind, ()):
        v = params.get(key)
        if v is None:
            errs.append(f"params.{key} is required")
        elif not isinstance(v, list) or len(v) == 0:
            errs.append(f"params.{key} must be a non-empty list")
    if errs:
        raise ConfigError("; ".join(errs))
    out = dict(cfg)
    out["schema_version"] = SCHEMA_VERSION
    out["shots"] = shots
    out["params"] = params
    return out


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# ----------------------------------------------------------------------------
# output helpers

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def write_csv(path: Path, rows: List[dict]):
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in cols})


def write_json(path: Path, obj):
    path.write_text(json.dumps(gt._jsonable(obj), indent=2, sort_keys=True, default=_default) + "\n")


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(type(o))


# ----------------------------------------------------------------------------
# experiments

def _gate_sim(cfg, out: Path) -> List[str]:
    p = cfg["params"]
    variant = p.get("variant", "Model1")
    gates = p.get("gates", ["CX", "CRX", "Idle"])
    rows, channels = [], []
    for q in p["q"]:
        for a2 in p["alpha2"]:
            model = dy.NoiseModel.from_variant(variant, q)
            alpha = math.sqrt(a2)
            for g in gates:
                if g == "CX":
                    ch = gt.simulate_cx(model, alpha, tol=p.get("tol", 1e-10)).channel
                elif g == "CRX":
                    env = gt.default_crx_envelope(alpha, kind=p.get("envelope", "semiclassical_2comp"))
                    ch = gt.simulate_crx(model, alpha, env, tol=p.get("tol", 1e-10)).channel
                elif g == "Idle":
                    ch = gt.simulate_idle(model, alpha)
                else:
                    raise ConfigError(f"unknown gate {g}")
                m = gt.gate_metrics(ch)
                row = {"gate": g, "variant": variant, "q": q, "alpha2": a2, **m.to_dict()}
                if ch.n_qubits == 1:
                    row.update(p_bit_cat=ch.probs["X"] + ch.probs["Y"], p_Z_cat=ch.probs["Z"])
                rows.append(row)
                channels.append(ch.to_json(g))
    write_csv(out / "metrics.csv", rows)
    write_json(out / "channels.json", channels)
    plotting.plot("fig3c", rows, out / "fig3c.svg")
    return ["metrics.csv", "channels.json", "fig3c.svg"]


def _dephasing(cfg, out: Path) -> List[str]:
    p = cfg["params"]
    alpha = complex(p.get("alpha", 2.0))
    n_traj = int(p.get("n_traj", cfg["shots"]))
    times = [float(t) for t in p["times"]]
    window = max(times)
    rows = []
    for kind in p.get("kinds", ["white", "one_over_f"]):
        ir = dy.ir_cutoff_for(window, n_traj) if kind == "one_over_f" else 0.0
        spec = dy.DephasingSpectrum(kind, float(p.get("amplitude", 0.02)), ir)
        for echo in p.get("echo", [False, True]):
            res = dy.dephasing_trajectories(spec, {"alpha": alpha, "times": times, "echo": echo}, n_traj,
                                            seed=cfg["seed"])
            for t, g, e in zip(res.times, res.gamma, res.gamma_stderr):
                try:
                    a = dy.analytic_dephasing(spec, echo, alpha, t)
                except CatQECError:
                    a = math.nan
                rows.append({"kind": kind, "echo": bool(echo), "t": float(t), "gamma": float(g),
                             "gamma_stderr": float(e), "analytic": a, "ir_cutoff": ir})
    write_csv(out / "dephasing.csv", rows)
    plotting.plot("fig8", rows, out / "fig8.svg")
    return ["dephasing.csv", "fig8.svg"]


def _drag_sweep(cfg, out: Path) -> List[str]:
    p = cfg["params"]
    rows = []
    for env_kind in p["envelopes"]:
        for a2 in p["alpha2"]:
            alpha = math.sqrt(a2)
            env = gt.default_crx_envelope(alpha, kind=env_kind)
            err = gt.coherent_error(alpha, env)
            row = {"envelope": env_kind, "alpha2": a2, "coherent_error": err, "optimized": False,
                   "params": " ".join(repr(float(x)) for x in env.params)}
            if p.get("optimize", False) and env_kind in ("semiclassical_2comp", "semiclassical_3comp",
                                                         "exact_1comp"):
                env, err = optimized_envelope(alpha, env_kind, seed=cfg["seed"], maxiter=int(p.get("maxiter", 60)))
                row.update(coherent_error=err, optimized=True,
                           params=" ".join(repr(float(x)) for x in env.params))
            rows.append(row)
    write_csv(out / "drag.csv", rows)
    plotting.plot("fig5b", rows, out / "fig5b.svg")
    return ["drag.csv", "fig5b.svg"]


def optimized_envelope(alpha, kind: str, seed: int = 0, maxiter: int = 60, n_starts: int = 2):
    """Minimize the coherent CRX error over the envelope detunings."""
    n = {"exact_1comp": 1, "semiclassical_2comp": 2, "semiclassical_3comp": 3}[kind]
    obj = lambda d: gt.coherent_error(alpha, gt.default_crx_envelope(alpha, kind=kind, deltas=tuple(d)))
    best, val = pl.optimize_deltas(obj, n, alpha, n_starts=n_starts, seed=seed, maxiter=maxiter)
    env = gt.default_crx_envelope(alpha, kind=kind, deltas=tuple(best))
    default = gt.default_crx_envelope(alpha, kind=kind)
    dval = gt.coherent_error(alpha, default)
    return (env, val) if val <= dval else (default, dval)


def _stabilization(cfg, out: Path) -> List[str]:
    p = cfg["params"]
    alpha = float(p.get("alpha", 2.0))
    kw = {k: p[k] for k in ("period", "n_rounds") if k in p}
    rows, summary = [], []
    for kr in p["kappa_ratios"]:
        for duty in p["duties"]:
            c = st.PulsingConfig.from_product(alpha, kr, duty, **kw)
            t, px = st.bitflip_curve(c)
            for ti, pi in zip(t, px):
                rows.append({"kappa_ratio": kr, "duty": duty, "t": float(ti), "p_X": float(pi)})
            summary.append({"kappa_ratio": kr, "duty": duty, "product": kr * duty,
                            "exponent": st.powerlaw_exponent(px, t), "well_stabilized": st.well_stabilized(c)})
    write_csv(out / "stabilization.csv", rows)
    write_csv(out / "exponents.csv", summary)
    write_json(out / "fit_summary.json", summary)
    plotting.plot("fig9", summary, out / "fig9.svg")
    return ["stabilization.csv", "exponents.csv", "fit_summary.json", "fig9.svg"]


def _noise_from(spec: dict, cache_dir=None):
    kind = spec.get("kind", "simplified")
    if kind == "simplified":
        eta = spec.get("eta", 1e3)
        return cd.SimplifiedNoise(spec["p_Z"], math.inf if eta in ("inf", None) else float(eta),
                                  spec.get("readout_reset_error", 0.01))
    if kind == "depolarizing":
        return ex.unbiased_noise(spec["p"], spec.get("readout_reset_error", 0.01))
    if kind in ("full", "mapped"):
        chans = ex.gate_channels(spec.get("variant", "Model1"), spec["q"], spec["alpha2"], cache_dir)
        return ex.full_noise(chans) if kind == "full" else ex.mapped_noise(chans)
    if kind == "none":
        return None
    raise ConfigError(f"unknown noise kind {kind}")


def _qec_sample(cfg, out: Path) -> List[str]:
    p = cfg["params"]
    rows = []
    files = []
    backend = p.get("backend", "mwpm")
    for i, pt in enumerate(p["points"]):
        fam = pt.get("family", "CSS_rotated")
        noise = _noise_from(pt.get("noise", {"kind": "none"}), p.get("cache_dir"))
        patch = cd.build_patch(fam, pt["dX"], pt["dZ"])
        circ = cd.syndrome_circuit(patch, pt.get("rounds"), noise, pt.get("basis", "X"))
        seed = cfg["seed"] + i
        batch = dc.sample(circ, cfg["shots"], seed)
        dem = dc.build_dem(circ)
        pred = dc.Decoder(dem, backend).decode_batch(batch.detection_events)
        k = int(np.any(pred != batch.observable_flips, axis=1).sum())
        lo, hi = dc.wilson_interval(k, cfg["shots"])
        noise_desc = pt.get("noise", {})
        row = {"family": fam, "dX": pt["dX"], "dZ": pt["dZ"], "d": pt["dZ"], "basis": pt.get("basis", "X"),
               "rounds": circ.metadata["rounds"], "p_Z": noise_desc.get("p_Z", noise_desc.get("p", "")),
               "eta": noise_desc.get("eta", ""), "n_shots": cfg["shots"], "n_errors": k,
               "rate": k / cfg["shots"], "ci_low": lo, "ci_high": hi, "seed": seed, "backend": backend}
        rows.append(row)
        if p.get("write_shots", False):
            header, payload = batch.to_bytes()
            (out / f"shots_{i}.bin").write_bytes(payload)
            write_json(out / f"shots_{i}.json", header)
            files += [f"shots_{i}.bin", f"shots_{i}.json"]
        if p.get("write_circuits", False):
            (out / f"circuit_{i}.txt").write_text(circ.to_text())
            (out / f"dem_{i}.txt").write_text(dem.to_text())
            files += [f"circuit_{i}.txt", f"dem_{i}.txt"]
    write_csv(out / "qec.csv", rows)
    write_json(out / "qec.json", rows)
    files += ["qec.csv", "qec.json"]
    if any(r["p_Z"] != "" for r in rows):
        plotting.plot("fig11c", [r for r in rows if r["p_Z"] != ""], out / "fig11c.svg")
        files.append("fig11c.svg")
    return files


def _threshold(cfg, out: Path) -> List[str]:
    p = cfg["params"]
    rows = ex.threshold_sweep(p["q"], p["dZ"], p.get("dX", 5), p.get("alpha2", 6.0), p.get("variant", "Model1"),
                              cfg["shots"], cfg["seed"], p.get("cache_dir"), p.get("backend", "pymatching"))
    try:
        qth = an.threshold_estimate(ex.curves_from_rows(rows, "q", "dZ"))
    except CatQECError as e:
        qth = None
        summary_err = str(e)
    else:
        summary_err = None
    for r in rows:
        r["threshold"] = qth if qth is not None else ""
    write_csv(out / "threshold.csv", rows)
    write_json(out / "threshold.json", {"threshold_q": qth, "error": summary_err, "n_points": len(rows)})
    plotting.plot("fig4", rows, out / "fig4.svg", threshold=qth)
    return ["threshold.csv", "threshold.json", "fig4.svg"]


def _achievable(cfg, out: Path) -> List[str]:
    p = cfg["params"]
    cache = p.get("cache_dir")
    rows = an.achievable_map(p["q"], p["alpha2"], p.get("variant", "Model1"),
                             lambda v, q, a2: ex.gate_channels(v, q, a2, cache))
    write_csv(out / "achievable.csv", rows)
    plotting.plot("fig6", rows, out / "fig6.svg")
    return ["achievable.csv", "fig6.svg"]


def _overhead(cfg, out: Path) -> List[str]:
    p = cfg["params"]
    fits_obj = json.loads(Path(p["fits"]).read_text()) if "fits" in p else p["fit_params"]
    unb = an.FitResult.from_dict(fits_obj["unbiased"]) if "unbiased" in fits_obj else None
    fz = {int(k): an.FitResult.from_dict(v) for k, v in fits_obj.get("z", {}).items()}
    fx = {int(k): an.FitResult.from_dict(v) for k, v in fits_obj.get("x", {}).items()}
    rows = []
    for target in p["targets"]:
        for x in p["x"]:
            if unb is not None:
                try:
                    r = an.overhead(target, {"p": x}, unb)
                    rows.append({"target": target, "x": x, "eta": math.inf, "dX": r.dX, "dZ": r.dZ,
                                 "qubits": r.qubits, "p_L": r.p_L})
                except CatQECError:
                    pass
            for eta in p.get("etas", []):
                try:
                    r = an.overhead(target, {"p_Z": x, "eta": eta}, {"z": fz, "x": fx})
                    rows.append({"target": target, "x": x, "eta": eta, "dX": r.dX, "dZ": r.dZ,
                                 "qubits": r.qubits, "p_L": r.p_L})
                except CatQECError:
                    pass
    write_csv(out / "overhead.csv", rows)
    plotting.plot("fig7", rows, out / "fig7.svg")
    return ["overhead.csv", "fig7.svg"]


_RUNNERS = {"gate-sim": _gate_sim, "dephasing-study": _dephasing, "drag-sweep": _drag_sweep,
            "stabilization-study": _stabilization, "qec-sample": _qec_sample, "threshold": _threshold,
            "achievable-map": _achievable, "overhead": _overhead}


def _versions():
    import scipy

    return {"catqec": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def run(cfg: dict) -> Path:
    """Execute a validated config; returns the output directory."""
    cfg = validate_config(cfg)
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    files = _RUNNERS[cfg["experiment"]](cfg, out)
    manifest = {"manifest_version": 1, "config": cfg, "config_hash": config_hash(cfg), "versions": _versions(),
                "wall_time_s": time.time() - t0,
                "outputs": {f: hashlib.sha256((out / f).read_bytes()).hexdigest() for f in files}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


# ----------------------------------------------------------------------------
# entry point

def _fail(code: int, exc: BaseException, out_dir=None) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    sys.stderr.write(json.dumps(err) + "\n")
    if out_dir:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            (Path(out_dir) / "error.json").write_text(json.dumps(err, indent=2) + "\n")
        except OSError:
            pass
    return code


def _load(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="catqec", description="cat-transmon QEC experiment runner")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run an experiment config or re-run a manifest")
    r.add_argument("config")
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    p = sub.add_parser("plot", help="render a figure from result CSV files")
    p.add_argument("kind", choices=plotting.KINDS)
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", required=True)
    args = ap.parse_args(argv)
    out_dir = None
    try:
        if args.cmd == "plot":
            plotting.plot(args.kind, args.inputs, args.output)
            return 0
        raw = _load(args.config)
        if isinstance(raw, dict):
            out_dir = (raw.get("config", raw) or {}).get("output_dir")
        cfg = validate_config(raw)
        if args.cmd == "validate":
            print(json.dumps({"valid": True, "config_hash": config_hash(cfg)}))
            return 0
        out = run(cfg)
        print(json.dumps({"ok": True, "output_dir": str(out)}))
        return 0
    except ConfigError as e:
        return _fail(2, e, out_dir)
    except Exception as e:  # noqa: BLE001 - every module failure maps to exit 1
        return _fail(1, e, out_dir)


if __name__ == "__main__":
    sys.exit(main())
