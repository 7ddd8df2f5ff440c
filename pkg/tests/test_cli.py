import json
import math

import pytest

from branchtail import cli
from branchtail.output import read_csv
from branchtail.treesim import pick_depth

import laws


def write_law(tmp_path, law, name="law.json"):
    p = tmp_path / name
    p.write_text(json.dumps(law.to_dict()))
    return str(p)


def write_doc(tmp_path, doc, name="law.json"):
    p = tmp_path / name
    p.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return str(p)


def run(*argv):
    return cli.main([str(a) for a in argv])


DEGENERATE_Q = {"n": {"kind": "det", "value": 1}, "c": {"magnitude": {"kind": "det", "value": 0.5}},
                "q": {"kind": "det", "value": 0}}


# -- validate -------------------------------------------------------------------

def test_validate_ok(tmp_path, capsys):
    assert run("validate", "--config", write_law(tmp_path, laws.small_discrete())) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["fingerprint"] == laws.small_discrete().fingerprint()


def test_validate_malformed(tmp_path):
    assert run("validate", "--config", write_doc(tmp_path, '{"n": ')) == 1


def test_validate_degenerate_q(tmp_path, capsys):
    assert run("validate", "--config", write_doc(tmp_path, DEGENERATE_Q)) == 1
    assert "degenerate Q" in capsys.readouterr().err


def test_validate_warns_on_first_moment(tmp_path, capsys):
    # alpha ~ 1.89 > 1 while E[sum |C|] = 0.949 < 1: no warning
    assert run("validate", "--config", write_law(tmp_path, laws.small_discrete())) == 0
    assert "warning" not in capsys.readouterr().err
    # two-point law has alpha = 1: no first-moment warning either, but lognormal N = 3 does
    doc = laws.lognormal().to_dict()
    doc["n"] = {"kind": "det", "value": 3}
    assert run("validate", "--config", write_doc(tmp_path, doc)) == 0


def test_missing_config_argument():
    assert run("validate") == 1


# -- alpha ----------------------------------------------------------------------

def test_alpha_examples(tmp_path, capsys):
    out = tmp_path / "o"
    assert run("alpha", "--config", write_law(tmp_path, laws.two_point_lattice()), "--bracket", 0.1, 4,
               "--out", out) == 0
    res = json.loads((out / "alpha.json").read_text())
    assert abs(res["alpha"] - 1) < 1e-10 and res["mu"] == pytest.approx(math.log(2) / 3)
    assert run("alpha", "--config", write_law(tmp_path, laws.lognormal()), "--out", out) == 0
    assert abs(json.loads((out / "alpha.json").read_text())["alpha"] - 2) < 1e-10
    assert run("alpha", "--config", write_law(tmp_path, laws.geometric_path()), "--out", out) == 2
    assert "no root" in capsys.readouterr().err


def test_alpha_down_crossing_exit(tmp_path):
    doc = {"n": {"kind": "det", "value": 2}, "c": {"magnitude": {"kind": "det", "value": 0.5}},
           "q": {"kind": "det", "value": 1}}
    assert run("alpha", "--config", write_doc(tmp_path, doc), "--out", tmp_path / "o") == 2


# -- simulate and trace ------------------------------------------------------------

def test_simulate_geometric(tmp_path):
    out = tmp_path / "o"
    assert run("simulate", "--config", write_law(tmp_path, laws.geometric_path()), "--depth", 10,
               "--count", 7, "--out", out) == 0
    rows = read_csv(out / "samples.csv")
    assert len(rows) == 7 and all(float(r["value"]) == 2 - 2.0**-10 for r in rows)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate" and manifest["outputs"] == ["samples.csv"]
    assert manifest["fingerprint"] == laws.geometric_path().fingerprint()
    assert set(manifest) >= {"seed", "parameters", "version", "wall_clock", "argv"}


def test_simulate_auto_depth(tmp_path, capsys):
    cfg = write_law(tmp_path, laws.geometric_path())
    assert run("simulate", "--config", cfg, "--count", 3, "--beta", 1.0, "--epsilon", 0.1, "--delta", 0.01,
               "--out", tmp_path / "o") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["depth"] == pick_depth(laws.geometric_path(), 0.1, 0.01, beta=1.0) == 10


def test_simulate_byte_identical(tmp_path):
    cfg = write_law(tmp_path, laws.small_discrete())
    for name in ("a", "b"):
        assert run("simulate", "--config", cfg, "--depth", 4, "--count", 2000, "--seed", 99, "--streams", 3,
                   "--out", tmp_path / name) == 0
    assert (tmp_path / "a" / "samples.csv").read_bytes() == (tmp_path / "b" / "samples.csv").read_bytes()


def test_rerun_from_manifest(tmp_path):
    cfg = write_law(tmp_path, laws.small_discrete())
    assert run("simulate", "--config", cfg, "--depth", 3, "--count", 500, "--seed", 5, "--out", tmp_path / "a") == 0
    argv = json.loads((tmp_path / "a" / "manifest.json").read_text())["argv"]
    i = argv.index("--out")
    argv[i + 1] = str(tmp_path / "b")
    assert cli.main(argv) == 0
    assert (tmp_path / "a" / "samples.csv").read_bytes() == (tmp_path / "b" / "samples.csv").read_bytes()


def test_simulate_node_cap_exit(tmp_path, monkeypatch):
    monkeypatch.setenv("BRANCHTAIL_NODE_CAP", "1000")
    doc = {"n": {"kind": "det", "value": 2}, "c": {"magnitude": {"kind": "det", "value": 0.3}},
           "q": {"kind": "det", "value": 1}}
    assert run("simulate", "--config", write_doc(tmp_path, doc), "--depth", 12, "--count", 2,
               "--method", "exact", "--out", tmp_path / "o") == 4


def test_simulate_contractivity_exit(tmp_path):
    doc = {"n": {"kind": "det", "value": 2}, "c": {"magnitude": {"kind": "det", "value": 1}},
           "q": {"kind": "det", "value": 1}}
    assert run("simulate", "--config", write_doc(tmp_path, doc), "--out", tmp_path / "o") == 2


def test_trace(tmp_path):
    out = tmp_path / "o"
    assert run("trace", "--config", write_law(tmp_path, laws.geometric_path()), "--depth", 3, "--out", out) == 0
    rows = read_csv(out / "trace.csv")
    assert [float(r["w"]) for r in rows] == [1, 0.5, 0.25, 0.125]
    assert [int(r["z"]) for r in rows] == [1, 1, 1, 1]


# -- tail and hconst ------------------------------------------------------------------

def test_tail_missing_samples(tmp_path, capsys):
    assert run("tail", "--config", write_law(tmp_path, laws.lognormal()), "--samples", tmp_path / "nope.csv",
               "--out", tmp_path / "o") == 1
    assert "not found" in capsys.readouterr().err


def test_tail_end_to_end(tmp_path):
    law = laws.symmetric_lognormal()
    cfg = write_law(tmp_path, law)
    sim = tmp_path / "sim"
    assert run("simulate", "--config", cfg, "--count", 2 * 10**5, "--seed", 3, "--out", sim) == 0
    out = tmp_path / "tail"
    assert run("tail", "--config", cfg, "--samples", sim / "samples.csv", "--h-count", 10**5, "--svg",
               "--out", out) == 0
    rows = read_csv(out / "tail.csv")
    assert list(rows[0]) == ["t", "emp_ccdf_right", "ci_lo_r", "ci_hi_r", "emp_ccdf_left", "ci_lo_l", "ci_hi_l",
                             "model_right", "model_left", "ratio_right", "ratio_left", "flag"]
    ok = [r for r in rows if r["flag"] == "ok"]
    assert ok
    for r in ok:
        assert 0.5 <= float(r["ratio_right"]) <= 2 and 0.5 <= float(r["ratio_left"]) <= 2
    assert (out / "tail.svg").read_text().startswith("<svg")
    hill_rows = read_csv(out / "hill.csv")
    assert 1.7 < float(hill_rows[0]["alpha_right"]) < 2.3


def test_hconst_control_law_zero(tmp_path):
    law = laws.flat_nonlattice()
    cfg = write_law(tmp_path, law)
    sim = tmp_path / "sim"
    assert run("simulate", "--config", cfg, "--depth", 400, "--count", 2 * 10**4, "--out", sim) == 0
    out = tmp_path / "h"
    assert run("hconst", "--config", cfg, "--samples", sim / "samples.csv", "--alpha", 1.0, "--count", 10**4,
               "--out", out) == 0
    res = json.loads((out / "hconst.json").read_text())
    for form in ("moment", "integral"):
        lo, hi = (res[form]["h"] or res[form]["h_plus"])["ci"]
        assert lo - 1e-12 <= 0 <= hi + 1e-12


def test_hconst_lattice(tmp_path):
    law = laws.symmetric_lattice()
    cfg = write_law(tmp_path, law)
    sim = tmp_path / "sim"
    assert run("simulate", "--config", cfg, "--depth", 60, "--count", 2 * 10**4, "--method", "pool",
               "--out", sim) == 0
    out = tmp_path / "h"
    assert run("hconst", "--config", cfg, "--samples", sim / "samples.csv", "--method", "moment",
               "--count", 10**4, "--t", 0.1, 0.1 + math.log(2), "--out", out) == 0
    lat = json.loads((out / "hconst.json").read_text())["lattice"]
    assert lat[0]["h_plus"] == lat[1]["h_plus"]


# -- renewal ------------------------------------------------------------------------

def test_renewal_both_modes(tmp_path):
    out = tmp_path / "o"
    assert run("renewal", "--config", write_law(tmp_path, laws.two_point_lattice(0.3)), "--n", 4,
               "--out", out) == 0
    conv, enum = read_csv(out / "mu_4_convolve.csv"), read_csv(out / "mu_4_enumerate.csv")
    assert len(conv) == len(enum)
    for a, b in zip(conv, enum):
        for key in a:
            assert float(a[key]) == pytest.approx(float(b[key]), abs=1e-10)
    text = (out / "eta.csv").read_text()
    assert "# kind=lattice" in text and "# span=" in text
    summary = json.loads((out / "renewal.json").read_text())
    assert summary["max_diff"] <= 1e-10


def test_renewal_nonlattice_enumerate(tmp_path, capsys):
    assert run("renewal", "--config", write_law(tmp_path, laws.lognormal()), "--n", 2, "--mode", "enumerate",
               "--out", tmp_path / "o") == 1
    assert "not finite-discrete" in capsys.readouterr().err


def test_renewal_n0_delta(tmp_path):
    out = tmp_path / "o"
    assert run("renewal", "--config", write_law(tmp_path, laws.two_point_lattice()), "--n", 0,
               "--out", out) == 0
    rows = read_csv(out / "mu_0_convolve.csv")
    assert [(float(r["support"]), float(r["mass_pp"]), float(r["mass_pm"])) for r in rows] == [(0.0, 1.0, 0.0)]


def test_renewal_not_normalized(tmp_path):
    assert run("renewal", "--config", write_law(tmp_path, laws.two_point_lattice()), "--n", 1,
               "--alpha", 1.5, "--out", tmp_path / "o") == 2


# -- oracle -------------------------------------------------------------------------

def test_oracle_checks(tmp_path):
    out = tmp_path / "o"
    assert run("oracle", "--config", write_law(tmp_path, laws.small_discrete()), "--depth", 1,
               "--checks", "max_approx", "indicator", "alpha_moment", "--out", out) == 0
    rows = read_csv(out / "pmf.csv")
    assert math.fsum(float(r["probability"]) for r in rows) == pytest.approx(1, abs=1e-12)
    checks = json.loads((out / "checks.json").read_text())
    assert set(checks) == {"max_approx", "indicator", "alpha_moment"}


def test_oracle_too_large(tmp_path):
    assert run("oracle", "--config", write_law(tmp_path, laws.small_discrete()), "--depth", 9,
               "--out", tmp_path / "o") == 4


def test_oracle_continuous_refused(tmp_path):
    assert run("oracle", "--config", write_law(tmp_path, laws.lognormal()), "--depth", 1,
               "--out", tmp_path / "o") == 1
