import json

import jsonschema
import numpy as np
import pytest
from importlib.resources import files

from anosovps import cli
from anosovps import orbit


@pytest.fixture(scope="module")
def preset():
    return orbit.default_preset()


@pytest.fixture(scope="module")
def table(preset):
    return orbit.enumerate_ball(preset, 5)


def _schema(name):
    return json.loads(files("anosovps").joinpath(f"schemas/{name}").read_text())


def run(*argv):
    return cli.main(list(argv))


# ---------------------------------------------------------------------------
# configuration plumbing


def test_config_file_and_override(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("# comment\nmax-len = 3\nseed = 7\n")
    out = tmp_path / "orbit.csv"
    assert run("enumerate", "--config", str(cfgfile), "--out", str(out)) == 0
    assert len(out.read_text().splitlines()) == 1 + 53
    # command-line value wins over the file value
    assert run("enumerate", "--config", str(cfgfile), "--max-len", "2",
               "--out", str(out)) == 0
    assert len(out.read_text().splitlines()) == 1 + 17


def test_config_hash_tracks_settings(tmp_path):
    out1, out2, out3 = (tmp_path / n for n in ("a.json", "b.json", "c.json"))
    assert run("limit-cone", "--max-len", "3", "--out", str(out1)) == 0
    assert run("limit-cone", "--max-len", "3", "--out", str(out2)) == 0
    assert run("limit-cone", "--max-len", "4", "--out", str(out3)) == 0
    assert out1.read_bytes() == out2.read_bytes()
    h1 = json.loads(out1.read_text())["config_hash"]
    h3 = json.loads(out3.read_text())["config_hash"]
    assert h1 != h3 and len(h1) == 16
    assert json.loads(out1.read_text())["seed"] == 0


def test_missing_config_exits_3(tmp_path):
    assert run("enumerate", "--config", str(tmp_path / "absent.cfg")) == 3


def test_missing_preset_exits_3(tmp_path):
    assert run("enumerate", "--preset", str(tmp_path / "absent.json"),
               "--out", str(tmp_path / "o.csv")) == 3


def test_preset_file_roundtrip(preset, tmp_path):
    pfile = tmp_path / "preset.json"
    pfile.write_text(json.dumps(preset.to_json()))
    out = tmp_path / "orbit.csv"
    assert run("enumerate", "--preset", str(pfile), "--max-len", "2",
               "--out", str(out)) == 0
    assert len(out.read_text().splitlines()) == 1 + 17


def test_corrupted_preset_exits_1(preset, tmp_path):
    data = preset.to_json()
    theta = 0.7
    rot = [[np.cos(theta), -np.sin(theta), 0.0],
           [np.sin(theta), np.cos(theta), 0.0],
           [0.0, 0.0, 1.0]]
    rot_inv = [list(row) for row in np.array(rot).T]
    data["matrices"] = [rot, rot_inv] + data["matrices"][2:]
    pfile = tmp_path / "bad.json"
    pfile.write_text(json.dumps(data))
    assert run("enumerate", "--preset", str(pfile),
               "--out", str(tmp_path / "o.csv")) == 1


def test_enumeration_cap_exits_2(tmp_path):
    assert run("enumerate", "--max-len", "14",
               "--out", str(tmp_path / "o.csv")) == 2


def test_bad_psi_exits_2(tmp_path):
    assert run("ps-build", "--max-len", "3", "--psi", "1,2",
               "--out", str(tmp_path / "m.json")) == 2


def test_unknown_suite_exits_2(tmp_path):
    assert run("verify", "--max-len", "3", "--suite", "no-such-suite",
               "--out", str(tmp_path / "r.json")) == 2


# ---------------------------------------------------------------------------
# row arithmetic


def test_ball_row_indices_match_table(table):
    idx = cli.ball_row_indices(table.letters, table.word_len,
                               table.preset.alphabet.size)
    assert np.array_equal(idx, np.arange(len(table)))


def test_almost_additivity_defect_witness(table):
    from anosovps.words import Word
    defect, witness = cli.almost_additivity_defect(table)
    assert defect > 0
    w = Word.parse(table.preset.alphabet, witness["word"])
    k = witness["split"]
    assert 0 < k < len(w.letters)
    # recompute the witness defect directly
    pre = table.mu[table.row_of(w.prefix(k))]
    suf = table.mu[table.row_of(Word(w.alphabet, w.letters[k:]))]
    gap = float(np.abs(table.mu[table.row_of(w)] - pre - suf).max())
    assert gap == pytest.approx(defect, rel=1e-12)


# ---------------------------------------------------------------------------
# verification report


def test_verify_identities_pass_and_validate(tmp_path):
    out = tmp_path / "report.json"
    assert run("verify", "--max-len", "4", "--instances", "60",
               "--suite", "identities", "--out", str(out)) == 0
    report = json.loads(out.read_text())
    jsonschema.validate(report, _schema("verify_report.json"))
    assert len(report["suites"]) == len(cli.IDENTITY_SUITES)
    for entry in report["suites"]:
        assert entry["status"] == "pass"
        assert entry["hard"] is True


def test_verify_reports_are_deterministic(tmp_path):
    out1, out2 = tmp_path / "r1.json", tmp_path / "r2.json"
    args = ("verify", "--max-len", "3", "--instances", "40",
            "--suite", "projection-involution,weak-constants")
    assert run(*args, "--out", str(out1)) == 0
    assert run(*args, "--out", str(out2)) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_verify_seed_changes_witnesses(tmp_path):
    out1, out2 = tmp_path / "r1.json", tmp_path / "r2.json"
    args = ("verify", "--max-len", "3", "--instances", "40",
            "--suite", "cocycle-additivity")
    assert run(*args, "--seed", "1", "--out", str(out1)) == 0
    assert run(*args, "--seed", "2", "--out", str(out2)) == 0
    r1, r2 = json.loads(out1.read_text()), json.loads(out2.read_text())
    assert r1["config_hash"] != r2["config_hash"]
    c1 = r1["suites"][0]["fitted_constants"]["max_residual"]
    c2 = r2["suites"][0]["fitted_constants"]["max_residual"]
    assert c1 != c2


# ---------------------------------------------------------------------------
# artifacts


def test_ps_build_measure_payload(tmp_path):
    out = tmp_path / "measure.json"
    assert run("ps-build", "--max-len", "4", "--psi", "1,0,-1",
               "--out", str(out)) == 0
    payload = json.loads(out.read_text())
    assert payload["command"] == "ps-build"
    assert "config_hash" in payload and "seed" in payload
    meas = payload["measure"]
    assert meas["L"] == 4
    assert meas["shell_floor"] == 2
    total = sum(a["weight"] for a in meas["atoms"])
    assert total == pytest.approx(1.0, abs=1e-12)


def test_limitset_outputs(tmp_path):
    out = tmp_path / "limitset.csv"
    assert run("limitset", "--max-len", "3", "--out", str(out)) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "word,x,y"
    assert len(lines) == 1 + 52
    cone = tmp_path / "limitset_cone.csv"
    kinds = {line.split(",")[0] for line in cone.read_text().splitlines()[1:]}
    assert kinds == {"direction", "ray"}


def test_metric_artifact(tmp_path):
    out = tmp_path / "metric.json"
    assert run("metric", "--max-len", "4", "--samples", "20",
               "--out", str(out)) == 0
    payload = json.loads(out.read_text())
    assert payload["admissible_eps"] > 0
    assert payload["eps"] <= payload["admissible_eps"] + 1e-12
    assert 1.0 <= payload["distortion"] <= 2.0
    assert payload["triangle_n"] >= 1.0


def test_shadow_constant_report(tmp_path):
    out = tmp_path / "shadow.json"
    assert run("shadow", "--max-len", "5", "--samples", "20",
               "--out", str(out)) == 0
    payload = json.loads(out.read_text())
    jsonschema.validate(payload, _schema("constant_report.json"))
    assert payload["fitted_constant"] >= 0
    assert payload["sample_size"] > 0


def test_growth_and_exponent(tmp_path):
    gout = tmp_path / "growth.json"
    assert run("growth", "--max-len", "5", "--out", str(gout)) == 0
    growth = json.loads(gout.read_text())
    assert growth["directions"]
    slopes = [e["slope"] for e in growth["directions"] if e["slope"] is not None]
    assert slopes and all(np.isfinite(s) for s in slopes)
    eout = tmp_path / "exponent.json"
    assert run("exponent", "--max-len", "5", "--out", str(eout)) == 0
    exponent = json.loads(eout.read_text())
    assert exponent["slope"] > 0
    assert exponent["upper"] >= exponent["slope"]


def test_myrberg_artifact(tmp_path):
    out = tmp_path / "myrberg.json"
    assert run("myrberg", "--max-len", "4", "--targets", "4",
               "--tol", "0.4", "--out", str(out)) == 0
    payload = json.loads(out.read_text())
    assert 0.0 <= payload["score"] <= 1.0
    assert payload["targets"] == 4


def test_essential_certificate(tmp_path):
    out = tmp_path / "essential.json"
    assert run("essential", "--max-len", "8", "--out", str(out)) == 0
    payload = json.loads(out.read_text())
    assert payload["found"] is True
    assert payload["reverified"] is True
    cert = payload["certificate"]
    assert cert["gamma0"] == "aaa"
    assert cert["max_busemann_deviation"] < cert["epsilon"]
    assert cert["set_mass"] > 0


# ---------------------------------------------------------------------------
# full verification sweep at desk scale


def test_verify_full_sweep(tmp_path):
    out = tmp_path / "report.json"
    assert run("verify", "--max-len", "6", "--instances", "120",
               "--out", str(out)) == 0
    report = json.loads(out.read_text())
    jsonschema.validate(report, _schema("verify_report.json"))
    assert len(report["suites"]) == len(cli.SUITES)
    assert all(e["status"] in ("pass", "info") for e in report["suites"])
