import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from catqec import cli, plotting
from catqec.errors import ConfigError, InsufficientData, MissingColumn

SVG = "{http://www.w3.org/2000/svg}"


def _qec_cfg(out, seed=1, shots=10_000):
    return {"schema_version": 1, "experiment": "qec-sample", "seed": seed, "shots": shots, "output_dir": str(out),
            "params": {"points": [{"family": "CSS_rotated", "dX": 3, "dZ": 3, "basis": "X",
                                   "noise": {"kind": "simplified", "p_Z": 3e-3, "eta": 100}}],
                       "write_shots": True, "write_circuits": True}}


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def _svg_paths(path):
    root = ET.parse(path).getroot()
    assert root.tag == SVG + "svg"
    return [p.get("d", "") for p in root.iter(SVG + "path")]


def _outputs(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.suffix in (".csv", ".json", ".bin", ".txt")
            and p.name != "manifest.json"}


def test_validate_accepts_good_config(tmp_path, capsys):
    assert cli.main(["validate", _write(tmp_path / "c.json", _qec_cfg(tmp_path / "o"))]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["valid"] and len(out["config_hash"]) == 64


def test_missing_seed_exits_2_with_error_json(tmp_path, capsys):
    cfg = _qec_cfg(tmp_path / "o")
    del cfg["seed"]
    code = cli.main(["run", _write(tmp_path / "c.json", cfg)])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError" and "seed" in err["message"]
    assert json.loads((tmp_path / "o" / "error.json").read_text())["exit_code"] == 2


@pytest.mark.parametrize("patch", [{"shots": 50}, {"experiment": "nope"}, {"params": {"points": []}},
                                   {"seed": -1}, {"output_dir": ""}])
def test_invalid_configs_are_rejected(tmp_path, patch):
    cfg = dict(_qec_cfg(tmp_path / "o"), **patch)
    with pytest.raises(ConfigError):
        cli.validate_config(cfg)


def test_unreadable_config_is_a_config_error(tmp_path, capsys):
    (tmp_path / "bad.json").write_text("{not json")
    assert cli.main(["validate", str(tmp_path / "bad.json")]) == 2


def test_runtime_failure_exits_1(tmp_path, capsys):
    cfg = _qec_cfg(tmp_path / "o")
    cfg["params"]["points"][0]["dX"] = 4
    assert cli.main(["run", _write(tmp_path / "c.json", cfg)]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "InvalidDistance"


def test_qec_sample_reruns_are_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", _write(tmp_path / "ca.json", _qec_cfg(a))]) == 0
    assert cli.main(["run", _write(tmp_path / "cb.json", _qec_cfg(b))]) == 0
    oa, ob = _outputs(a), _outputs(b)
    assert set(oa) >= {"qec.csv", "qec.json", "shots_0.bin", "shots_0.json", "circuit_0.txt", "dem_0.txt"}
    assert oa == ob
    ma = json.loads((a / "manifest.json").read_text())
    assert ma["outputs"]["qec.csv"] == json.loads((b / "manifest.json").read_text())["outputs"]["qec.csv"]
    assert {"config_hash", "versions", "wall_time_s"} <= set(ma)
    row = json.loads((a / "qec.json").read_text())[0]
    assert row["n_shots"] == 10_000 and 0 < row["rate"] < 0.2


def test_different_seed_changes_shots(tmp_path, capsys):
    cli.run(_qec_cfg(tmp_path / "a", seed=1))
    cli.run(_qec_cfg(tmp_path / "b", seed=2))
    assert (tmp_path / "a" / "shots_0.bin").read_bytes() != (tmp_path / "b" / "shots_0.bin").read_bytes()


def test_rerun_from_manifest_reproduces_outputs(tmp_path, capsys):
    out = tmp_path / "o"
    cli.run(_qec_cfg(out, shots=2000))
    before = _outputs(out)
    manifest = json.loads((out / "manifest.json").read_text())
    assert cli.main(["run", str(out / "manifest.json")]) == 0
    assert _outputs(out) == before
    after = json.loads((out / "manifest.json").read_text())
    assert after["outputs"] == manifest["outputs"] and after["config_hash"] == manifest["config_hash"]


def test_shot_file_layout(tmp_path):
    out = tmp_path / "o"
    cli.run(_qec_cfg(out, shots=1000))
    header = json.loads((out / "shots_0.json").read_text())
    bits = np.unpackbits(np.frombuffer((out / "shots_0.bin").read_bytes(), np.uint8), bitorder="little")
    width = header["n_detectors"] + header["n_observables"]
    assert bits.size == header["n_shots"] * ((width + 7) // 8) * 8


def test_worker_count_does_not_change_outputs(tmp_path, monkeypatch):
    monkeypatch.setenv("CATQEC_WORKERS", "1")
    cli.run(_qec_cfg(tmp_path / "a", shots=20_000))
    monkeypatch.setenv("CATQEC_WORKERS", "2")
    cli.run(_qec_cfg(tmp_path / "b", shots=20_000))
    assert _outputs(tmp_path / "a") == _outputs(tmp_path / "b")


def test_threshold_plot_has_dashed_line(tmp_path):
    x = np.geomspace(1e-4, 1e-2, 9)
    rows = []
    for d in (5, 9, 13):
        for q, y in zip(x, 0.1 * (x / 1e-3) ** ((d + 1) / 2)):
            y = min(y, 0.5)
            rows.append({"q": q, "dZ": d, "rate": y, "ci_low": 0.8 * y, "ci_high": 1.2 * y})
    out = plotting.plot("fig4", rows, tmp_path / "f4.svg", threshold=1e-3)
    paths = _svg_paths(out)
    assert sum(1 for p in paths if p.strip()) >= 10
    text = out.read_text()
    assert "stroke-dasharray" in text
    assert "threshold" in text.lower()


def test_fig7_shades_bias_band(tmp_path):
    rows = []
    for x in (1e-4, 3e-4, 1e-3):
        rows.append({"target": 1e-10, "x": x, "eta": "inf", "qubits": 1000 * x / 1e-3})
        rows.append({"target": 1e-10, "x": x, "eta": 1e3, "qubits": 300 * x / 1e-3})
        rows.append({"target": 1e-10, "x": x, "eta": 1e4, "qubits": 150 * x / 1e-3})
    out = plotting.plot("fig7", rows, tmp_path / "f7.svg")
    root = ET.parse(out).getroot()
    shaded = [g for g in root.iter(SVG + "g") if (g.get("id") or "").startswith("FillBetweenPolyCollection")
              or (g.get("id") or "").startswith("PolyCollection")]
    assert shaded, "no filled band between the eta=1e3 and eta=1e4 curves"


def test_plot_errors(tmp_path):
    with pytest.raises(MissingColumn):
        plotting.plot("fig4", [{"q": 1e-3, "dZ": 5}], tmp_path / "x.svg")
    with pytest.raises(InsufficientData):
        plotting.plot("fig4", [], tmp_path / "x.svg")
    with pytest.raises(ValueError):
        plotting.plot("fig99", [{"a": 1}], tmp_path / "x.svg")


def test_plot_subcommand_from_csv_and_missing_column_exit(tmp_path, capsys):
    out = tmp_path / "o"
    cli.run(_qec_cfg(out, shots=1000))
    assert cli.main(["plot", "fig11c", str(out / "qec.csv"), "-o", str(tmp_path / "p.svg")]) == 0
    assert any(p.strip() for p in _svg_paths(tmp_path / "p.svg"))
    assert cli.main(["plot", "fig9", str(out / "qec.csv"), "-o", str(tmp_path / "q.svg")]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "MissingColumn"


def test_stabilization_and_drag_runs_render_svgs(tmp_path):
    stab = {"experiment": "stabilization-study", "seed": 0, "shots": 100, "output_dir": str(tmp_path / "s"),
            "params": {"kappa_ratios": [25, 125], "duties": [1.0]}}
    cli.run(stab)
    summary = json.loads((tmp_path / "s" / "fit_summary.json").read_text())
    assert len(summary) == 2 and all(0.8 < r["exponent"] < 1.3 for r in summary)
    drag = {"experiment": "drag-sweep", "seed": 0, "shots": 100, "output_dir": str(tmp_path / "d"),
            "params": {"envelopes": ["truncated_gaussian", "semiclassical_2comp"], "alpha2": [4, 6]}}
    cli.run(drag)
    for f in (tmp_path / "s" / "fig9.svg", tmp_path / "d" / "fig5b.svg"):
        assert any(p.strip() for p in _svg_paths(f))


def test_overhead_run_from_fit_parameters(tmp_path):
    unb = {"ansatz": "unbiased", "params": {"A": 0.05, "B": 20.0, "C": 0.5}, "covariance": [[0] * 3] * 3,
           "domain": {}, "residual_rms": 0.0, "n_points": 0}
    cfg = {"experiment": "overhead", "seed": 0, "shots": 100, "output_dir": str(tmp_path / "o"),
           "params": {"targets": [1e-10], "x": [5e-4, 1e-3], "fit_params": {"unbiased": unb}}}
    cli.run(cfg)
    text = (tmp_path / "o" / "overhead.csv").read_text().splitlines()
    assert text[0].startswith("target,x,eta") and len(text) == 3
    ET.parse(tmp_path / "o" / "fig7.svg")


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path / "c.json", _qec_cfg(tmp_path / "o", shots=500))
    r = subprocess.run([sys.executable, "-m", "catqec.cli", "validate", cfg], capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["valid"]
