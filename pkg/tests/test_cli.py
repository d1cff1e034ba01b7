import json

import pytest

from sphericalization.cli import EXIT_ERROR, EXIT_INCONCLUSIVE, EXIT_OK, build_parser, load_config, main
from sphericalization.errors import ConfigError

SMALL = """
[density]
family = {family}
alpha = {alpha}
beta = {beta}
knots = {knots}

[space]
mesh_rel = 0.1
r_max = 100

[run]
pairs = 24
balls = 30
poincare_balls = 12
curves = 50
lambda = 2
fields = {fields}
counterexample_r_max = 1e6
"""


def write_cfg(tmp_path, family="powlog", alpha=-2, beta=0, knots="", fields="suite", name="c.ini"):
    p = tmp_path / name
    p.write_text(SMALL.format(family=family, alpha=alpha, beta=beta, knots=knots, fields=fields))
    return p


def run(tmp_path, *args, cfg=None, out="out"):
    cfg = cfg or write_cfg(tmp_path)
    return main(["--config", str(cfg), "--out", str(tmp_path / out), *args])


@pytest.mark.parametrize("alpha,beta,expect", [(-2, 0, ("pass", "pass")), (-1, -2, ("pass", "fail"))])
def test_check_density_verdicts(tmp_path, alpha, beta, expect):
    cfg = write_cfg(tmp_path, alpha=alpha, beta=beta)
    assert run(tmp_path, "check-density", cfg=cfg) == EXIT_OK
    rep = json.loads((tmp_path / "out" / "density_report.json").read_text())
    assert (rep["verdict_A"], rep["verdict_B"]) == expect


def test_check_density_exponential(tmp_path):
    cfg = write_cfg(tmp_path, family="exponential")
    assert run(tmp_path, "check-density", cfg=cfg) == EXIT_OK
    rep = json.loads((tmp_path / "out" / "density_report.json").read_text())
    assert (rep["verdict_A"], rep["verdict_B"]) == ("fail", "pass")


def test_check_density_inconclusive_exit(tmp_path):
    # a dip narrower than the sampling grid moves the sampled supremum under refinement
    knots = "1e-6:1, 5:1, 5.01:1e-3, 5.02:1, 100:1e-4"
    cfg = write_cfg(tmp_path, family="tabulated", knots=knots)
    assert run(tmp_path, "check-density", cfg=cfg) == EXIT_INCONCLUSIVE


def test_divergent_density_is_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, alpha=-0.5)
    assert run(tmp_path, "check-density", cfg=cfg) == EXIT_ERROR
    assert "error" in capsys.readouterr().err


def test_sphericalize_outputs(tmp_path):
    assert run(tmp_path, "sphericalize") == EXIT_OK
    out = tmp_path / "out"
    s = json.loads((out / "summary.json").read_text())
    assert 0 < s["diam_rho_hat"] < float("inf") and 0 < s["mu_rho_total"] < float("inf")
    assert len(s["spot_check"]) == 5
    header = (out / "distances.csv").read_text().splitlines()[0]
    assert header.startswith("node_id,x,y,radial,rho")
    assert (out / "config.ini").is_file()


def test_missing_force_is_prereq_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, family="exponential")
    assert run(tmp_path, "sphericalize", cfg=cfg) == EXIT_ERROR
    assert "PrereqError" in capsys.readouterr().err


def test_constant_density_spot_check(tmp_path):
    c = 0.25
    cfg = write_cfg(tmp_path, family="tabulated", knots=f"1e-6:{c}, 101:{c}, 1000:{c * 1e-4}")
    assert run(tmp_path, "--force", "sphericalize", cfg=cfg) == EXIT_OK
    s = json.loads((tmp_path / "out" / "summary.json").read_text())
    for row in s["spot_check"]:
        if row["d"] > 0:
            assert row["ratio"] == pytest.approx(c, rel=1e-9)


def test_verify_poincare_constant_fields(tmp_path):
    cfg = write_cfg(tmp_path, fields="constant")
    assert run(tmp_path, "verify", "poincare", cfg=cfg) == EXIT_OK
    lines = (tmp_path / "out" / "poincare.csv").read_text().splitlines()
    assert len(lines) > 1
    ratio_col = lines[0].split(",").index("ratio")
    assert all(float(r.split(",")[ratio_col]) == 0.0 for r in lines[1:])


def test_verify_all_small(tmp_path):
    assert run(tmp_path, "verify", "all") == EXIT_OK
    out = tmp_path / "out"
    for name in ("uniformity.json", "uniformity_rho.csv", "uniformity_d.csv", "uniformity_worst_curves.csv",
                 "brackets.json", "doubling.json", "doubling.csv", "poincare.json", "poincare.csv",
                 "counterexamples.json", "config.ini"):
        assert (out / name).is_file(), name
    for r in json.loads((out / "brackets.json").read_text()):
        assert r["verdict"] in ("holds", "resolution-limited")
    ce = json.loads((out / "counterexamples.json").read_text())
    assert ce["fails_A"]["verdict"] == "refuted"
    assert ce["fails_B"]["verdict"] == "refuted"


def test_determinism(tmp_path):
    assert run(tmp_path, "--seed", "3", "verify", "uniformity", out="a") == EXIT_OK
    assert run(tmp_path, "--seed", "3", "verify", "uniformity", out="b") == EXIT_OK
    for name in ("uniformity.json", "uniformity_rho.csv", "uniformity_worst_curves.csv", "config.ini"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_recorded_in_config_copy(tmp_path):
    run(tmp_path, "--seed", "11", "check-density")
    assert "seed = 11" in (tmp_path / "out" / "config.ini").read_text()


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")
    bad = tmp_path / "bad.ini"
    bad.write_text("[density]\nfamily = nonsense\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text("[run]\nfields = other\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    assert main(["--config", str(tmp_path / "missing.ini"), "check-density"]) == EXIT_ERROR


def test_defaults_without_config():
    cfg = load_config()
    assert cfg.sigma == 2.0 and cfg.lambdas == [1.0, 2.0, 4.0] and cfg.space["mesh_rel"] == 0.05


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["verify", "nothing"])
