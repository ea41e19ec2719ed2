import json

import pytest

from nilheat import harness as H
from nilheat import cli
from nilheat.errors import ConfigInvalid
from nilheat.geometry import ModelKind

U_DEPENDENT = ("sub_laplacian_integral", "ricci_identity", "bochner", "r_form_identity",
               "change_of_variable_sqrt_u", "change_of_variable_phi", "change_of_variable_linear",
               "dt_lap_key", "paneitz_identity", "rf_integral_u1", "rf_integral_u2",
               "c_operator_integral", "c_operator_pairing")

CONFIG = """
model = CR
n = 1
grid = 16, 32      # two resolutions
order = 4
init.shape = planar_modes
init.band_limit = 1
flow.t_final = 0.0006
flow.sample_every = 2
seed = 4
"""


def test_parse_config_text(tmp_path):
    path = tmp_path / "suite.cfg"
    path.write_text(CONFIG)
    cfg = H.load_config(path)
    assert cfg.kind is ModelKind.CR and cfg.n == 1
    assert cfg.ladder == ((16, 16, 16), (32, 32, 32))
    assert cfg.init.band_limit == 1 and cfg.init.seed == 4
    assert cfg.sample_every == 2 and cfg.t_final == 0.0006
    assert cfg.rule == "order"


def test_overrides_win(tmp_path):
    path = tmp_path / "suite.cfg"
    path.write_text(CONFIG)
    cfg = H.load_config(path, {"grid": "32x32x64", "seed": 9, "order": None})
    assert cfg.ladder == ((32, 32, 64),) and cfg.seed == 9 and cfg.order == 4


def test_qc_defaults():
    cfg = H.load_config(overrides={"model": "qc"})
    assert cfg.ladder == ((8,) * 7, (12,) * 7)
    assert cfg.rule == "decrease"


@pytest.mark.parametrize("overrides", [
    {"grid": "16x16x24"},           # vertical count not divisible
    {"grid": "16x16"},              # wrong number of axes
    {"grid": ""},
    {"order": "3"},
    {"model": "XX"},
    {"checks": "ricci_identity, nonsense"},
    {"flow.sample_every": "0"},
    {"init.shape": "blob"},
    {"grid": "abc"},
])
def test_invalid_configs(overrides):
    with pytest.raises(ConfigInvalid):
        H.load_config(overrides=overrides)


def test_unparsable_file(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("this line has no separator\n")
    with pytest.raises(ConfigInvalid):
        H.load_config(path)


def test_constant_data_suite_passes():
    cfg = H.load_config(overrides={"grid": "16,32", "init.shape": "constant",
                                   "init.amplitude": "1.3"})
    result = H.verify(cfg)
    assert result.passed
    rows = {(r.name, r.grid): r for r in result.reports}
    for (name, _), rep in rows.items():
        if name in U_DEPENDENT:
            assert rep.rel <= 1e-12, name
    assert all(v["status"] in ("pass", "recorded") for v in result.summary.values())


def test_errors_are_recorded_not_raised(monkeypatch):
    def boom(*args, **kwargs):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr(H.C, "bochner_residual", boom)
    cfg = H.load_config(overrides={"grid": "16,32", "checks": "bochner,ricci_identity"})
    result = H.verify(cfg)
    assert result.summary["bochner"]["status"] == "error"
    assert "synthetic failure" in result.summary["bochner"]["message"]
    assert result.summary["ricci_identity"]["status"] == "pass"
    assert not result.passed


def test_verify_outputs_deterministic(tmp_path):
    out = tmp_path / "o"
    cfg = H.load_config(overrides={"grid": "16,32", "out": str(out),
                                   "checks": "ricci_identity,divergence,c_operator_sign"})
    H.verify(cfg)
    first = (out / "verify.csv").read_bytes(), (out / "verify.json").read_bytes()
    H.verify(cfg)
    assert ((out / "verify.csv").read_bytes(), (out / "verify.json").read_bytes()) == first
    header = first[0].decode().splitlines()[0]
    assert header == "check_name,model,grid,h,abs_residual,rel_residual,order_vs_prev"
    summary = json.loads(first[1])
    assert set(summary["ricci_identity"]) >= {"status", "abs", "rel", "order"}
    assert summary["c_operator_sign"]["status"] == "recorded"


def test_refine_table(tmp_path):
    cfg = H.load_config(overrides={"grid": "16,32", "checks": "sub_laplacian_oracle",
                                   "out": str(tmp_path)})
    table = H.refine(cfg)
    assert len(table) == 1
    name, hc, hf, order = table[0]
    assert name == "sub_laplacian_oracle" and hc == 2 * hf
    assert 3.7 <= order <= 4.5
    assert (tmp_path / "refine.csv").read_text().startswith("check,h_coarse,h_fine,observed_order")
    with pytest.raises(ConfigInvalid):
        H.refine(H.load_config(overrides={"grid": "16"}))


def test_simulate_constant_is_trivially_monotone(tmp_path):
    cfg = H.load_config(overrides={"grid": "16", "init.shape": "constant",
                                   "flow.t_final": "0.0005", "flow.sample_every": "2",
                                   "out": str(tmp_path)})
    result = H.simulate(cfg)
    assert result.passed
    assert result.summary["monotone_E"]["status"] == "pass"
    assert (tmp_path / "trace.csv").exists() and (tmp_path / "simulate.json").exists()


def test_simulate_requires_positive_time():
    with pytest.raises(ConfigInvalid):
        H.simulate(H.load_config(overrides={"grid": "16", "flow.t_final": "0"}))


def test_cli_exit_codes(tmp_path, capsys):
    path = tmp_path / "suite.cfg"
    path.write_text(CONFIG)
    code = cli.main(["verify", str(path), "--grid", "16,32", "--out", str(tmp_path / "r")])
    assert code == 0
    assert "ricci_identity" in capsys.readouterr().out
    assert (tmp_path / "r" / "verify.csv").exists()
    assert cli.main(["verify", str(path), "--grid", "16x16x24"]) == 2
    # 16^3 is too coarse for the entropy identity tolerance, so this run must report failure
    assert cli.main(["simulate", str(path), "--grid", "16", "--t-final", "0.002"]) == 1
    flat = tmp_path / "flat.cfg"
    flat.write_text(CONFIG.replace("planar_modes", "constant"))
    assert cli.main(["simulate", str(flat), "--grid", "16", "--t-final", "0.002"]) == 0
    assert cli.main(["refine", "--grid", "16,32", "--model", "CR"]) == 0
