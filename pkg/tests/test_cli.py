import json

import numpy as np
import pytest

from dyadic_cz.cli import main
from dyadic_cz.config import ConfigError, ExperimentConfig


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_config_roundtrip():
    cfg = ExperimentConfig.from_dict({"tree": {"kind": "random", "seed": 7, "depth": 4},
                                      "symbol": {"kind": "constant", "preset": "random:3"}})
    again = ExperimentConfig.from_dict(json.loads(cfg.dumps()))
    assert again == cfg
    assert again.dumps() == cfg.dumps()


@pytest.mark.parametrize("doc,field", [
    ({"tree": {"leaf_weight_rule": "listed"}}, "tree.leaf_weight_rule"),
    ({"tree": {"kind": "oak"}}, "tree.kind"),
    ({"tree": {"colour": 1}}, "tree.colour"),
    ({"haar": {"strategy": "db4"}}, "haar.strategy"),
    ({"certify": {"p": 1}}, "certify.p"),
    ({"extra": {}}, "extra"),
])
def test_config_errors_name_field(doc, field):
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict(doc)
    assert err.value.field == field


def test_build_binary(tmp_path, capsys):
    assert main(["build", "--out", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["tree"]["M"] == 2
    assert man["haar"]["C1"] == pytest.approx(1.0)
    assert man["haar"]["C2"] == pytest.approx(1.0)
    assert (tmp_path / "tree.json").exists() and (tmp_path / "haar.json").exists()


def test_build_random_deterministic(tmp_path):
    cfg = write_config(tmp_path, {"tree": {"kind": "random", "seed": 7, "depth": 4,
                                           "branching_range": [2, 3]}})
    for name in ("a", "b"):
        assert main(["build", "--config", cfg, "--out", str(tmp_path / name)]) == 0
    for f in ("manifest.json", "tree.json", "haar.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_build_missing_weights_exit2(tmp_path, capsys):
    cfg = write_config(tmp_path, {"tree": {"leaf_weight_rule": "listed"}})
    assert main(["build", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "leaf_weight_rule" in capsys.readouterr().err


def test_missing_config_file_exit2(tmp_path):
    assert main(["build", "--config", str(tmp_path / "nope.json")]) == 2


def test_haar_budget_exit2(tmp_path, capsys):
    cfg = write_config(tmp_path, {"tree": {"depth": 1, "branching": 6},
                                  "haar": {"nonvanish_tol": 0.99}})
    assert main(["build", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "haar" in capsys.readouterr().err


def test_certify_binary_petermichl(tmp_path):
    assert main(["certify", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    comp = doc["report"]["composition"]
    assert all(comp["diagonal"][str(q)] == pytest.approx(2.0) for q in comp["interior"])
    assert doc["passed"] is True
    assert (tmp_path / "report.csv").read_text().count("\n") == 2


def test_certify_corrupted_tree(tmp_path, capsys):
    tree = tmp_path / "bad.json"
    tree.write_text(json.dumps({"structure": [2, 2, 0, 0, 0],
                                "leaf_weights": [0.3, 0.3, 0.4],
                                "measures": [1.0, 1.6, 0.3, 0.3, 0.4]}))
    cfg = write_config(tmp_path, {"tree": {"kind": "file", "path": str(tree)}})
    assert main(["certify", "--config", cfg, "--out", str(tmp_path)]) == 1
    rep = json.loads((tmp_path / "report.json").read_text())["report"]
    assert rep["ultrametric"]["ok"] is False
    w = rep["ultrametric"]["worst"]
    assert w["excess"] > 0 and {"x", "y", "z"} <= set(w)
    assert "FAIL" in capsys.readouterr().err


def test_sweep_rows(tmp_path):
    cfg = write_config(tmp_path, {"symbol": {"kind": "constant", "preset": "ones"},
                                  "certify": {"depths": [3, 4, 5, 6, 7, 8]}})
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(lines) == 7
    doc = json.loads((tmp_path / "sweep.json").read_text())
    assert all(r["symbol_Bb"] == 0.0 for r in doc["rows"])


def _run_apply(tmp_path, values, extra=None):
    f = tmp_path / "f.txt"
    f.write_text("".join(f"{float(v)!r}\n" for v in values))
    cfg = write_config(tmp_path, extra or {})
    assert main(["apply", "--config", cfg, "--input", str(f), "--out", str(tmp_path)]) == 0
    out = np.loadtxt(tmp_path / "output.txt")
    coef = json.loads((tmp_path / "coefficients.json").read_text())
    return out, coef


def test_apply_root_haar(tmp_path):
    out, coef = _run_apply(tmp_path, [1.0] * 4 + [-1.0] * 4)
    detail = {(d["cube"], d["index"]): d["coef"] for d in coef["output"]["detail"]}
    # children of the root are cubes 1 (left) and 8 (right) in preorder
    assert detail[(1, 0)] == pytest.approx(1.0)
    assert detail[(8, 0)] == pytest.approx(-1.0)
    assert sum(abs(v) for v in detail.values()) == pytest.approx(2.0)


def test_apply_constant_gives_zero(tmp_path):
    out, _ = _run_apply(tmp_path, [3.0] * 8)
    np.testing.assert_allclose(out, 0, atol=1e-14)


def test_apply_identity(tmp_path):
    f = np.random.default_rng(0).standard_normal(8)
    f -= f.mean()
    out, _ = _run_apply(tmp_path, list(f), {"symbol": {"kind": "constant", "preset": "ones"}})
    np.testing.assert_allclose(out, f, atol=1e-10)


def test_apply_length_mismatch(tmp_path):
    f = tmp_path / "f.txt"
    f.write_text("1\n2\n")
    assert main(["apply", "--input", str(f), "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("command", ["build", "certify", "sweep"])
def test_byte_identical_reports(tmp_path, command):
    cfg = write_config(tmp_path, {"tree": {"kind": "random", "seed": 3, "depth": 3,
                                           "branching_range": [2, 3]},
                                  "certify": {"depths": [2, 3]}})
    runs = []
    for name in ("a", "b"):
        main([command, "--config", cfg, "--out", str(tmp_path / name), "--threads", "2"])
        runs.append(sorted((p.name, p.read_bytes()) for p in (tmp_path / name).iterdir()))
    assert runs[0] == runs[1]


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("DYADIC_CZ_OUT", str(tmp_path / "env"))
    assert main(["build"]) == 0
    assert (tmp_path / "env" / "manifest.json").exists()


def test_seed_override(tmp_path):
    cfg = write_config(tmp_path, {"tree": {"kind": "random", "seed": 1}})
    assert main(["build", "--config", cfg, "--seed-override", "9",
                 "--out", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seeds"] == {"tree": 9, "haar": 9, "certify": 9}
