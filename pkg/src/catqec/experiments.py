"""Reusable experiment pipelines: gate channels, memory runs and sweeps."""
from __future__ import annotations

import hashlib
import json
import math
import os
from pathlib import Path
from typing import Dict, Iterable, Optional

from . import analysis as an
from . import code as cd
from . import decode as dc
from . import dynamics as dy
from . import gates as gt
from .gates import PauliChannel

CHANNEL_SCHEMA = 1


def _cache_path(cache_dir, key: dict) -> Optional[Path]:
    if cache_dir is None:
        return None
    h = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:20]
    return Path(cache_dir) / f"channels_{h}.json"


def gate_channels(variant: str, q: float, alpha2: float, cache_dir=None, tol: float = 1e-10,
                  envelope_kind: str = "semiclassical_2comp") -> Dict[str, PauliChannel]:
    """Extracted CX, CRX and idle channels at one (noise variant, q, |alpha|^2) point.

    Results are memoised as JSON in ``cache_dir`` when given.
    """
    key = {"schema": CHANNEL_SCHEMA, "variant": variant, "q": q, "alpha2": alpha2, "tol": tol,
           "envelope": envelope_kind}
    path = _cache_path(cache_dir, key)
    if path is not None and path.exists():
        obj = json.loads(path.read_text())
        return {k: PauliChannel.from_json(v) for k, v in obj["channels"].items()}
    model = dy.NoiseModel.from_variant(variant, q)
    alpha = math.sqrt(alpha2)
    env = gt.default_crx_envelope(alpha, kind=envelope_kind)
    chans = {"CX": gt.simulate_cx(model, alpha, tol=tol).channel,
             "CRX": gt.simulate_crx(model, alpha, env, tol=tol).channel,
             "Idle": gt.simulate_idle(model, alpha)}
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"key": key, "channels": {k: v.to_json() for k, v in chans.items()}}))
    return chans


def full_noise(chans: Dict[str, PauliChannel], readout_reset_error: float = 0.01) -> dict:
    return {"CX": chans["CX"], "CRX": chans["CRX"], "Idle": chans["Idle"],
            "readout_reset_error": readout_reset_error}


def mapped_noise(chans: Dict[str, PauliChannel], readout_reset_error: float = 0.01) -> cd.SimplifiedNoise:
    mp = an.mapped_parameters(chans["CX"], chans["CRX"])
    if mp is None:
        raise ValueError("channels have no Z or bit-flip errors to map")
    return cd.SimplifiedNoise(mp[0], mp[1], readout_reset_error)


def unbiased_noise(p: float, readout_reset_error: float = 0.01) -> dict:
    return dict(cd.depolarizing_channels(p), readout_reset_error=readout_reset_error)


def memory_rate(family: str, dX: int, dZ: int, noise, basis: str, shots: int, seed: int,
                backend: str = "pymatching", rounds: Optional[int] = None, workers=None) -> dict:
    """Logical error per memory experiment (dZ rounds unless ``rounds`` is set)."""
    patch = cd.build_patch(family, dX, dZ)
    circ = cd.syndrome_circuit(patch, rounds, noise, basis)
    res = dc.logical_error_rate(circ, shots, seed, backend, workers)
    res.update(family=family, dX=dX, dZ=dZ, basis=basis, rounds=circ.metadata["rounds"])
    return res


def threshold_sweep(q_grid: Iterable[float], dZs: Iterable[int], dX: int = 5, alpha2: float = 6.0,
                    variant: str = "Model1", shots: int = 100_000, seed: int = 1, cache_dir=None,
                    backend: str = "pymatching") -> list:
    """Full-channel CSS logical-Z rates over q for several dZ."""
    rows = []
    for i, q in enumerate(q_grid):
        chans = gate_channels(variant, q, alpha2, cache_dir)
        for dZ in dZs:
            r = memory_rate("CSS_rotated", dX, dZ, full_noise(chans), "X", shots, seed + 1000 * i + dZ, backend)
            r.update(q=q, alpha2=alpha2, variant=variant)
            rows.append(r)
    return rows


def curves_from_rows(rows, x_key: str, group_key: str, y_key: str = "rate"):
    out = {}
    for r in rows:
        xs, ys = out.setdefault(r[group_key], ([], []))
        xs.append(r[x_key])
        ys.append(r[y_key])
    return out


def default_workers() -> int:
    return dc.workers_from_env(min(4, os.cpu_count() or 1))
