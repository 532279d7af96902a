import json
import math
import shutil
from pathlib import Path

from ncres.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _result(out):
    return json.loads((out / "result.json").read_text())


def test_heat_flat(tmp_path):
    assert main(["heat", "--config", str(CONFIGS / "heat_flat.cfg"), "--out", str(tmp_path)]) == 0
    res = _result(tmp_path)
    assert res["status"] == "ok" and res["config"]["operator"]["Q"] == "laplacian"
    lead = res["records"][0]
    assert abs(lead["coef_re"] - math.pi) < 1e-10
    assert (tmp_path / "table.tsv").read_text().startswith("exponent")


def test_residue_of_differential_is_zero(tmp_path):
    assert main(["residue", "--config", str(CONFIGS / "residue_differential.cfg"),
                 "--out", str(tmp_path)]) == 0
    assert _result(tmp_path)["records"][0]["value"] == {"re": 0.0, "im": 0.0}


def test_residue_of_inverse_laplacian(tmp_path):
    assert main(["residue", "--config", str(CONFIGS / "residue_inverse.cfg"),
                 "--out", str(tmp_path)]) == 0
    v = _result(tmp_path)["records"][0]["value"]
    assert abs(v["re"] - 1 / (2 * math.pi)) < 1e-10


def test_error_writes_error_json(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[job]\nmode = heat\nn = 2\n[operator]\nQ = nonsense\n")
    out = tmp_path / "out"
    assert main(["heat", "--config", str(cfg), "--out", str(out)]) == 2
    err = json.loads((out / "error.json").read_text())
    assert err["status"] == "error" and "nonsense" in err["message"]
    assert not (out / "result.json").exists()
    assert main(["heat", "--config", str(tmp_path / "missing.cfg"), "--out", str(out)]) == 2
    assert main(["zeta", "--config", str(cfg), "--out", str(out)]) == 2


def test_relative_file_reference(tmp_path):
    shutil.copy(CONFIGS / "curvature.cfg", tmp_path / "c.cfg")
    text = (tmp_path / "c.cfg").read_text().replace("h = 1,0:0.3; -1,0:0.3", "h = file:h.npz")
    (tmp_path / "c.cfg").write_text(text)
    assert main(["curvature", "--config", str(tmp_path / "c.cfg"), "--out", str(tmp_path)]) == 2
    assert "does not exist" in json.loads((tmp_path / "error.json").read_text())["message"]


def test_selftest_subset(capsys):
    assert main(["selftest", "--only", "AC1,AC3", "--seed", "3"]) == 0
    first = capsys.readouterr().out
    assert main(["selftest", "--only", "AC1,AC3", "--seed", "3"]) == 0
    assert capsys.readouterr().out == first
    assert "selftest PASS 2/2" in first
