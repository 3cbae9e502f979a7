import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from sparsepass.cli import (
    EXIT_CONFIG,
    EXIT_NUMERIC,
    EXIT_OK,
    SCHEMA_VERSION,
    ConfigError,
    bundled_configs,
    cmd_test,
    load_config,
    main,
    render,
    validate_config,
)
from sparsepass.probdist import RngStream
from sparsepass.process import CAR1, MeanDiff, SamplingDesign, generate_dataset, write_csv

SMALL = {
    "kernel": {"type": "car1", "sigma2": 1.0, "base": 0.5},
    "design": {"counts": [8]},
    "pve": 0.9,
    "draws": 5000,
    "S": 2000,
    "seed": 7,
}


def write_cfg(tmp_path, **extra):
    cfg = dict(SMALL, **extra)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return str(p)


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_list_bundled(capsys):
    names = {"table1-case2-low", "table1-case2-medium", "table1-case3-medium", "table2-case2-low",
             "table3-case2-medium", "table3-case3-medium", "null-size"}
    assert set(bundled_configs()) == names
    code, out, _ = run(["list"], capsys)
    assert code == EXIT_OK
    assert {r["name"] for r in json.loads(out)["results"]} == names
    for n in names:
        load_config(n)


def test_power_report_schema(tmp_path, capsys):
    code, out, err = run(["power", write_cfg(tmp_path, etas=[0.0, 1.0], n=100)], capsys)
    assert code == EXIT_OK and err == ""
    rep = json.loads(out)
    assert rep["schema_version"] == SCHEMA_VERSION
    assert rep["inputs"]["seed"] == 7
    null, alt = rep["results"]
    assert {"power", "se", "K", "threshold", "nu", "delta", "n1", "n2"} <= set(null)
    assert null["power"] == pytest.approx(0.05, abs=0.02)
    assert alt["power"] > 0.8


def test_samplesize_brackets(tmp_path, capsys):
    code, out, _ = run(["samplesize", write_cfg(tmp_path, etas=[1.0], targets=[0.8])], capsys)
    assert code == EXIT_OK
    (row,) = json.loads(out)["results"]
    assert row["brackets"] and row["power_below"] <= 0.8 < row["power"]


@pytest.mark.parametrize("extra", [{"bogus": 1}, {"alpha": 1.5}, {"targets": [0.01]}, {"etas": True},
                                   {"design": {"counts": [8], "spacing": 2}}])
def test_config_errors_exit_2(tmp_path, capsys, extra):
    code, out, err = run(["power", write_cfg(tmp_path, **{"etas": [1.0], "n": 100, **extra})], capsys)
    assert code == EXIT_CONFIG and out == "" and err.startswith("error")


def test_missing_config_and_bad_json(tmp_path, capsys):
    assert run(["power", "no-such-config"], capsys)[0] == EXIT_CONFIG
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert run(["power", str(p)], capsys)[0] == EXIT_CONFIG
    with pytest.raises(ConfigError):
        validate_config([1, 2])


def test_unreachable_target_exit_3(tmp_path, capsys):
    code, out, err = run(["samplesize", write_cfg(tmp_path, etas=[0.05], targets=[0.9], n_max=30)], capsys)
    assert code == EXIT_NUMERIC and out == "" and err


def test_validate_empty_grid(tmp_path, capsys):
    assert run(["validate", write_cfg(tmp_path, etas=[1.0])], capsys)[0] == EXIT_CONFIG


def test_csv_format(tmp_path, capsys):
    code, out, _ = run(["power", write_cfg(tmp_path, etas=[1.0], ns=[60, 80]), "--format", "csv"], capsys)
    assert code == EXIT_OK
    assert out.endswith("\r\n") and out.count("\r\n") == 3
    header, *rows = csv.reader(io.StringIO(out))
    assert "power" in header and len(rows) == 2
    assert len(rows[0][header.index("delta")].split(";")) == int(rows[0][header.index("K")])


def test_render_quotes_and_nan():
    text = render({"results": [{"a": "x,y", "b": float("nan"), "c": True}]}, "csv")
    assert text == 'a,b,c\r\n"x,y",,true\r\n'
    assert json.loads(render({"v": float("inf")}, "json")) == {"v": None}


def test_out_flag_and_overrides(tmp_path, capsys):
    cfg = write_cfg(tmp_path, etas=[1.0], n=100)
    out_path = tmp_path / "r.json"
    assert run(["power", cfg, "--out", str(out_path), "--seed", "3", "--draws", "2000"], capsys)[1] == ""
    rep = json.loads(out_path.read_text())
    assert rep["inputs"]["seed"] == 3 and rep["inputs"]["draws"] == 2000


def test_determinism_across_workers(tmp_path, capsys):
    cfg = write_cfg(tmp_path, etas=[0.5], ns=[60], modes=["known-eigen", "empirical-fpca"], reps=100)
    outs = [run(["validate", cfg, "--workers", w], capsys)[1] for w in ("1", "2", "1")]
    assert outs[0] == outs[1] == outs[2]


def test_module_entry_point(tmp_path):
    cfg = write_cfg(tmp_path, etas=[1.0], n=100)
    cmd = [sys.executable, "-m", "sparsepass", "power", cfg]
    a = subprocess.run(cmd, capture_output=True)
    b = subprocess.run(cmd, capture_output=True)
    assert a.returncode == 0 and a.stdout == b.stdout


def synthetic_csv(path, seed, n1, n2, eta, counts=(8,), shift=0.0, scale=1.0):
    gen = RngStream(seed, (9,)).generator
    data = generate_dataset(gen, n1, n2, MeanDiff.cubic(eta), CAR1(), SamplingDesign(counts), 0.001)
    for s in data.subjects:
        s.times = shift + scale * s.times
    write_csv(data, path)
    return str(path)


def test_test_command_report(tmp_path, capsys):
    p = synthetic_csv(tmp_path / "d.csv", 1, 60, 60, 1.0, shift=2.0, scale=10.0)
    code, out, _ = run(["test", p, "--pve", "0.9"], capsys)
    assert code == EXIT_OK
    rep = json.loads(out)
    assert {"T", "p_value", "reject", "K"} <= set(rep["result"])
    curve = rep["effect_curve"]
    assert curve["time"][0] > 2.0 and curve["time"][-1] < 12.0
    assert len(curve["time"]) == len(curve["group1_minus_group2"]) == 100
    assert rep["tau2_hat"] >= 0


def test_test_command_errors(tmp_path, capsys):
    one = tmp_path / "one.csv"
    one.write_text("subject_id,group,time,value\r\na,1,0.1,1\r\na,1,0.5,2\r\nb,1,0.2,1\r\nb,1,0.7,0\r\n")
    code, _, err = run(["test", str(one)], capsys)
    assert code == EXIT_CONFIG and "single group" in err
    bad = tmp_path / "bad.csv"
    bad.write_text("subject_id,group,time,value\na,1,0.1,1\na,3,0.2,1\n")
    code, _, err = run(["test", str(bad)], capsys)
    assert code == EXIT_CONFIG and "line 3" in err
    hdr = tmp_path / "hdr.csv"
    hdr.write_text("id,group,time,value\n")
    assert run(["test", str(hdr)], capsys)[0] == EXIT_CONFIG


def test_null_files_size(tmp_path):
    cfg = validate_config({"pve": 0.9})
    pv = [cmd_test(synthetic_csv(tmp_path / f"n{i}.csv", 100 + i, 100, 100, 0.0), cfg)["result"]["p_value"]
          for i in range(60)]
    assert np.mean(np.array(pv) < 0.05) <= 0.15
    assert 0.3 < np.mean(pv) < 0.7


def test_alternative_files_reject(tmp_path):
    cfg = validate_config({"pve": 0.9})
    rej = [cmd_test(synthetic_csv(tmp_path / f"a{i}.csv", 500 + i, 200, 200, 1.0), cfg)["result"]["reject"]
           for i in range(20)]
    assert np.mean(rej) >= 0.9
