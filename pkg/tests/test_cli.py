import csv
import hashlib
import io
import json
import math
import os
import shutil

import jsonschema
import pytest
from hypothesis import given, strategies as st

from qcrystal import cli
from qcrystal.config import apply_overrides, config_digest, load_config, parse_text
from qcrystal.errors import InputError
from qcrystal.inequalities import InequalityReport
from qcrystal.serialize import SCHEMAS, csv_text, dumps, format_float, schema

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")
TWO_SITE = os.path.join(CONFIGS, "two_site.ini")
QUARTIC_NN = os.path.join(CONFIGS, "quartic_nn.ini")


def _run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = cli.main(list(argv) + ["-o", str(out)])
    return code, out


def _load(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _validate(out, report):
    jsonschema.validate(_load(out / f"{report}.json"), schema(report))
    manifest = _load(out / "manifest.json")
    jsonschema.validate(manifest, schema("manifest"))
    for name, digest in manifest["files"].items():
        with open(out / name, "rb") as fh:
            assert hashlib.sha256(fh.read()).hexdigest() == digest
    return manifest


# --- subcommands ----------------------------------------------------------


def test_criteria_reports_beta_star(tmp_path):
    code, out = _run(tmp_path, "criteria", QUARTIC_NN, "--table", "coupling.j=0.5:3.0:6")
    assert code == 0
    rep = _load(out / "criteria.json")["report"]
    assert rep["phase_transition_predicted"] and rep["beta_star"] > 0
    manifest = _validate(out, "criteria")
    assert manifest["config_sha256"] == load_config(QUARTIC_NN).digest
    assert manifest["exit_code"] == 0 and manifest["seed"] == 0
    with open(out / "criteria_table.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 7 and rows[0][0] == "coupling.j"
    assert rows[1][1] == "false" and rows[-1][1] == "true"


def test_spectrum_report(tmp_path):
    code, out = _run(tmp_path, "spectrum", QUARTIC_NN)
    assert code == 0
    _validate(out, "spectrum")
    rep = _load(out / "spectrum.json")
    assert rep["K_upp"] <= rep["K_upp_bound"]
    with open(out / "gamma.csv", "rb") as fh:
        raw = fh.read()
    assert raw.count(b"\r\n") == 12


def test_simulate_is_reproducible_across_threads(tmp_path):
    c1, o1 = _run(tmp_path, "simulate", TWO_SITE, "--seed", "4", "--threads", "1", name="a")
    c2, o2 = _run(tmp_path, "simulate", TWO_SITE, "--seed", "4", "--threads", "3", name="b")
    assert c1 == c2 == 0
    for name in ("simulate.json", "trace.csv", "manifest.json"):
        assert (o1 / name).read_bytes() == (o2 / name).read_bytes()
    _validate(o1, "simulate")
    c3, o3 = _run(tmp_path, "simulate", TWO_SITE, "--seed", "5", name="c")
    assert (o1 / "simulate.json").read_bytes() != (o3 / "simulate.json").read_bytes()


def test_simulate_torus_reports_order_parameter(tmp_path):
    code, out = _run(tmp_path, "simulate", os.path.join(CONFIGS, "torus_d3.ini"), "--set", "box.p=4",
                     "--set", "mc.sweeps=400", "--set", "mc.burnin=100", "--set", "mc.chains=2")
    assert code == 0
    rep = _load(out / "simulate.json")
    assert rep["n_sites"] == 64 and rep["order_parameter"]["value"] > 0
    _validate(out, "simulate")


def test_pressure_report(tmp_path):
    code, out = _run(tmp_path, "pressure", TWO_SITE)
    assert code == 0
    _validate(out, "pressure")
    rep = _load(out / "pressure.json")
    assert rep["convex"] and rep["evenness_defect"] <= 1e-12 and rep["bounds"]["holds"]


def test_leeyang_report(tmp_path):
    code, out = _run(tmp_path, "leeyang", TWO_SITE, "--set", "leeyang.orders=4,5")
    assert code == 0
    _validate(out, "leeyang")
    rep = _load(out / "leeyang.json")
    assert [z["order"] for z in rep["zeros"]] == [4, 5]
    assert isinstance(rep["condition"]["holds"], bool)


@pytest.mark.parametrize("suite", ["harmonic", "meta"])
def test_verify_suites_pass(tmp_path, suite):
    code, out = _run(tmp_path, "verify", "--suite", suite)
    assert code == 0
    manifest = _validate(out, "verify")
    assert manifest["config_sha256"] is None
    rep = _load(out / "verify.json")
    assert rep["status"] == "ok" and rep["failures"] == 0


def test_verify_failure_exit_code(tmp_path, monkeypatch):
    # a meta check that wrongly passes means the harness is broken
    fake = InequalityReport("fkg", "fake", 1.0, 0.0, 1.0, True, 1e-9, "exact", "pass")
    monkeypatch.setattr(cli, "antiferromagnetic_meta_check", lambda: fake)
    code, out = _run(tmp_path, "verify", "--suite", "meta")
    assert code == cli.EXIT_INEQUALITY
    rep = _load(out / "verify.json")
    assert rep["status"] == "failed" and rep["testcases"][0]["status"] == "failed"
    jsonschema.validate(rep, schema("verify"))


# --- errors ---------------------------------------------------------------


def _error(out):
    err = _load(out / "error.json")
    jsonschema.validate(err, schema("error"))
    return err


def test_malformed_config_exits_one(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[model\nd = 1\n")
    code, out = _run(tmp_path, "criteria", str(bad))
    assert code == cli.EXIT_INPUT
    assert _error(out)["exit_code"] == 1
    assert _load(out / "manifest.json")["exit_code"] == 1


@pytest.mark.parametrize("override", ["model.beta=-1", "potential.coefficients=1,-1", "model.colour=red",
                                      "coupling.kind=magic"])
def test_invalid_model_exits_one(tmp_path, override):
    code, out = _run(tmp_path, "criteria", TWO_SITE, "--set", override)
    assert code == cli.EXIT_INPUT
    _error(out)


def test_missing_box_exits_one(tmp_path):
    code, out = _run(tmp_path, "simulate", QUARTIC_NN)
    assert code == cli.EXIT_INPUT
    assert "box" in _error(out)["message"]


def test_numeric_failure_exits_two(tmp_path):
    code, out = _run(tmp_path, "spectrum", QUARTIC_NN, "--set", "spectrum.x_max=1.0")
    assert code == cli.EXIT_NUMERIC
    assert _error(out)["error_type"] == "TruncationError"


def test_usage_errors_exit_one(tmp_path, capsys):
    assert cli.main(["bogus"]) == cli.EXIT_INPUT
    assert cli.main([]) == cli.EXIT_INPUT
    assert cli.main(["simulate", TWO_SITE, "--threads", "0", "-o", str(tmp_path / "t")]) == cli.EXIT_INPUT
    assert cli.main(["--schema", "nope"]) == cli.EXIT_INPUT


def test_missing_config_file_exits_one(tmp_path):
    code, out = _run(tmp_path, "criteria", str(tmp_path / "absent.ini"))
    assert code == cli.EXIT_INPUT


# --- schemas and serialization --------------------------------------------


def test_schema_flag_prints_valid_schemas(capsys):
    assert cli.main(["--schema"]) == 0
    all_schemas = json.loads(capsys.readouterr().out)
    assert set(all_schemas) == set(SCHEMAS)
    for s in all_schemas.values():
        jsonschema.Draft202012Validator.check_schema(s)
    assert cli.main(["--schema", "manifest"]) == 0
    assert json.loads(capsys.readouterr().out)["title"] == "manifest"


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_format_float_round_trips(x):
    s = format_float(x)
    assert float(s) == x
    assert json.loads(s) == x


def test_non_finite_floats_become_null():
    assert json.loads(dumps({"a": math.nan, "b": [math.inf, 1.0]})) == {"a": None, "b": [None, 1.0]}
    assert dumps(3.0).strip() == "3.0"


def test_csv_quoting_and_line_ends():
    text = csv_text(["name", "value"], [['a,"b"', 0.1], ["plain", None], ["flag", True]])
    assert text.split("\r\n")[1] == '"a,""b""",0.10000000000000001'
    assert text.endswith("\r\n") and "\n" not in text.replace("\r\n", "")
    rows = list(csv.reader(io.StringIO(text, newline="")))
    assert rows[1] == ['a,"b"', "0.10000000000000001"]
    assert rows[2] == ["plain", ""] and rows[3] == ["flag", "true"]


# --- config ---------------------------------------------------------------


def test_config_digest_ignores_comments_and_layout():
    a = parse_text("[model]\nd = 1\nbeta = 2.0\n[potential]\ncoefficients = -1, 0.5\n")
    b = parse_text("# comment\n[potential]\ncoefficients = -1, 0.5  # inline\n\n[model]\nbeta=2.0\nd=1\n")
    assert config_digest(a) == config_digest(b)


def test_overrides_change_digest_and_values():
    base = load_config(TWO_SITE)
    over = load_config(TWO_SITE, ["model.beta=2.5", "mc.chains=2"])
    assert over.spec.beta == 2.5 and over.mc.n_chains == 2
    assert over.digest != base.digest
    cp = parse_text("[model]\nd=1\nbeta=1\n[potential]\n")
    with pytest.raises(InputError):
        apply_overrides(cp, ["modelbeta=2"])


def test_finite_range_table_parses():
    cfg = load_config(TWO_SITE, ["coupling.kind=finite_range", "coupling.table=1=0.5; -1=0.5"])
    assert cfg.spec.couplings.entry((0,), (1,)) == 0.5


def test_default_threads_from_environment(monkeypatch):
    from qcrystal.pimc import default_threads

    monkeypatch.setenv("QCRYSTAL_THREADS", "3")
    assert default_threads() == 3


def test_sample_configs_parse():
    for name in sorted(os.listdir(CONFIGS)):
        cfg = load_config(os.path.join(CONFIGS, name))
        assert cfg.spec.beta > 0


def test_console_script_entry_point():
    exe = shutil.which("qcrystal")
    if exe is None:
        pytest.skip("package not installed as a console script")
    assert os.access(exe, os.X_OK)
