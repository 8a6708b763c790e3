import json
import math
from pathlib import Path

import numpy as np
import pytest

import rd_invert

CONFIGS = Path(__file__).resolve().parents[2] / "configs"


def test_forward_eigenmode_decays():
    out = rd_invert.forward(CONFIGS / "forward_eigenmode.json")
    u, t = out["u"], out["t"]
    assert u.shape == (len(t), len(out["x"]))
    assert abs(u[-1].max() - math.exp(-math.pi**2 * t[-1])) < 1e-4


def test_invert_trace_scheme():
    out = rd_invert.invert(CONFIGS / "final_plus_trace.json")
    assert out["iterations"] <= 10
    assert out["a_errors"][-1] < 0.05
    assert out["f_errors"][-1] < 0.10
    assert np.all(np.diff(out["u"]) > 0)


def test_singular_values_decay():
    sv = rd_invert.singular_values(n_steps=100, n_cells=200, n_modes=10)
    assert np.all(np.diff(sv["a"]) < 0)
    assert np.all(np.diff(sv["q"]) < 0)


def test_config_error_is_raised():
    cfg = json.loads((CONFIGS / "final_plus_trace.json").read_text())
    cfg["bogus"] = 1
    with pytest.raises(rd_invert.ConfigError):
        rd_invert.invert(cfg)


def test_run_reports_exit_codes(tmp_path):
    code, log, _ = rd_invert.run("forward", str(CONFIGS / "forward_eigenmode.json"), out=str(tmp_path))
    assert code == 0 and "sup_norm" in log
    assert (tmp_path / "final.csv").exists()
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert rd_invert.run("forward", str(bad))[0] == 2
