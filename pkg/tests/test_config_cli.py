import json
import logging

import numpy as np
import pytest

from dynatherm import cli
from dynatherm.config import defaults, load_config, parse_config
from dynatherm.errors import ConfigError, NumericalError
from dynatherm.records import read_csv, read_json, write_csv

SMALL = """\
[protocol]
realizations = 4
bootstrap = 20
t_max = 4
window_start = 1
window_end = 4

[recompile]
layers = 3
realizations = 2
hops = 2
max_iter = 200

[noise]
rc_samples = 3
"""


def data_files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if not p.name.endswith(".meta.json")}


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    """Full recompile -> noisy-run -> mitigate -> report chain on a small config."""
    root = tmp_path_factory.mktemp("chain")
    cfg = root / "small.ini"
    cfg.write_text(SMALL)
    out = root / "out"
    codes = {}
    for cmd in ("dynamics", "temperature-curve", "recompile", "noisy-run", "mitigate", "report"):
        codes[cmd] = cli.run([cmd, "--config", str(cfg), "--out-dir", str(out)])
    return cfg, out, codes


class TestConfig:
    def test_defaults_match_schema(self):
        cfg = defaults()
        assert cfg["protocol"]["realizations"] == 100
        assert cfg["noise"]["lambdas"] == (1.0, 3.0)
        assert cfg["recompile"]["layers"] == 20

    def test_unknown_key_names_the_line(self):
        with pytest.raises(ConfigError, match=r"x.ini:3: unknown key 'bogus' in \[protocol\]"):
            parse_config("[protocol]\nseed = 1\nbogus = 2\n", "x.ini")

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match=r"x.ini:2: unknown section \[plots\]"):
            parse_config("\n[plots]\nx = 1\n", "x.ini")

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="protocol.realizations"):
            parse_config("[protocol]\nrealizations = many\n")

    def test_semantic_checks_point_at_the_key(self):
        with pytest.raises(ConfigError, match=r"x.ini:3: noise.lambdas"):
            parse_config("[noise]\n\nlambdas = 1, 2\n", "x.ini")
        with pytest.raises(ConfigError, match="distinct"):
            parse_config("[system]\nfrequencies = 0.3, 0.3\n")

    def test_canonical_round_trip(self):
        cfg = parse_config(SMALL)
        again = parse_config(cfg.canonical())
        assert again.canonical() == cfg.canonical()
        assert again.sha256 == cfg.sha256

    def test_hash_ignores_output_directory_only(self):
        a = parse_config(SMALL + "[output]\ndirectory = a\n")
        b = parse_config(SMALL + "[output]\ndirectory = b\n")
        c = parse_config(SMALL.replace("rc_samples = 3", "rc_samples = 4"))
        assert a.sha256 == b.sha256 != c.sha256

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.ini")


class TestRecords:
    def test_csv_round_trip(self, tmp_path):
        write_csv(tmp_path / "a.csv", ["x", "y"], [[0.1, True], [np.float64(1 / 3), 2]], "abc")
        h, header, rows = read_csv(tmp_path / "a.csv")
        assert h == "abc" and header == ["x", "y"]
        assert rows == [["0.1", "true"], [repr(1 / 3), "2"]]

    def test_row_width_checked(self, tmp_path):
        with pytest.raises(ValueError):
            write_csv(tmp_path / "a.csv", ["x"], [[1, 2]], "abc")


class TestChain:
    def test_all_commands_succeed(self, chain):
        _, _, codes = chain
        assert codes == {k: 0 for k in codes}

    def test_every_output_embeds_the_config_hash(self, chain):
        cfg, out, _ = chain
        h = load_config(cfg).sha256
        for p in out.iterdir():
            if p.suffix == ".csv":
                assert read_csv(p)[0] == h, p.name
            elif p.suffix == ".json":
                assert read_json(p)["config_hash"] == h, p.name
            else:
                assert p.read_text().startswith(f"# config_sha256: {h}\n"), p.name

    def test_rerun_is_byte_identical(self, chain, tmp_path):
        cfg, out, _ = chain
        other = tmp_path / "again"
        for cmd in ("dynamics", "temperature-curve", "recompile", "noisy-run", "mitigate", "report"):
            assert cli.run([cmd, "--config", str(cfg), "--out-dir", str(other)]) == 0
        assert data_files(other) == data_files(out)

    def test_meta_echoes_config(self, chain):
        cfg, out, _ = chain
        meta = read_json(out / "mitigate.meta.json")
        assert meta["config"] == load_config(cfg).canonical().replace("directory = out",
                                                                      f"directory = {out}")
        assert "timestamp" in meta

    def test_occupation_table_has_one_row_per_time_and_level(self, chain):
        _, out, _ = chain
        _, header, rows = read_csv(out / "dynamics_dddd_occupations.csv")
        assert header == ["t", "level", "label", "occupation"]
        assert len(rows) == 81 * 16
        occ = np.array([float(r[3]) for r in rows]).reshape(81, 16)
        np.testing.assert_allclose(occ.sum(axis=1), 1.0, atol=1e-12)
        assert rows[0][2] == "dddd"
        assert read_json(out / "dynamics.json")["seed"] == 0

    def test_temperature_curve(self, chain):
        _, out, _ = chain
        _, header, rows = read_csv(out / "temperature_curve.csv")
        col = {k: i for i, k in enumerate(header)}
        eps = np.array([float(r[col["epsilon_in"]]) for r in rows])
        beta = np.array([float(r[col["beta"]]) for r in rows])
        s = np.array([float(r[col["entropy"]]) for r in rows])
        assert len(rows) == 16 and beta[0] > 0 > beta[-1]
        assert abs(eps[np.argmax(s)]) <= 0.25

    def test_mitigation_signs_and_monotonicity(self, chain):
        _, out, _ = chain
        m = read_json(out / "mitigation.json")["states"]
        dn, up = m["dddd"], m["uuuu"]
        # folding only adds depolarizing weight: g shrinks, beta's sign holds
        assert dn["g_qc3"] < dn["g_qc"] and up["g_qc3"] < up["g_qc"]
        assert dn["beta_qc"] * dn["beta_qc3"] > 0
        assert dn["mode"] == "plain" and up["mode"] == "mirrored"

    def test_noisy_counts_have_full_shots(self, chain):
        _, out, _ = chain
        _, header, rows = read_csv(out / "noisy_counts.csv")
        totals = {sum(int(x) for x in r[4:]) for r in rows}
        assert totals == {1000}
        # 2 states x 2 lambdas x 2 realizations x 3 dressings
        assert len(rows) == 24


class TestFailures:
    def test_malformed_config_exits_2_without_files(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[protocol]\nseed = 1\nbogus = 2\n")
        out = tmp_path / "out"
        assert cli.run(["dynamics", "--config", str(bad), "--out-dir", str(out)]) == 2
        assert "bad.ini:3" in capsys.readouterr().err
        assert not out.exists()

    def test_missing_upstream_names_the_file(self, tmp_path, capsys):
        out = tmp_path / "empty"
        assert cli.run(["mitigate", "--out-dir", str(out)]) == 2
        err = capsys.readouterr().err
        assert "noisy_occupations.csv" in err and "noisy-run" in err
        assert cli.run(["noisy-run", "--out-dir", str(out)]) == 2
        assert "recompile_ansatz.circ" in capsys.readouterr().err
        assert not out.exists()

    def test_bad_override(self, tmp_path):
        assert cli.run(["dynamics", "--realizations", "0", "--out-dir", str(tmp_path / "o")]) == 2
        assert cli.run(["dynamics", "--threads", "0", "--out-dir", str(tmp_path / "o")]) == 2

    def test_numerical_failure_exits_3(self, tmp_path, monkeypatch):
        def boom(cfg, threads):
            raise NumericalError("eigensolver did not converge")

        monkeypatch.setitem(cli.COMMANDS, "dynamics", boom)
        assert cli.run(["dynamics", "--out-dir", str(tmp_path / "o")]) == 3
        assert not (tmp_path / "o").exists()


def test_single_realization_trace_equals_mean(tmp_path):
    cfg = tmp_path / "r1.ini"
    cfg.write_text("[protocol]\nrealizations = 1\nbootstrap = 1\nt_max = 2\nwindow_start = 0.5\n"
                   "window_end = 2\nper_realization = true\ninitial_states = dddd\n")
    assert cli.run(["dynamics", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 0
    _, hm, mean = read_csv(tmp_path / "o" / "dynamics_dddd.csv")
    _, ht, traces = read_csv(tmp_path / "o" / "dynamics_dddd_traces.csv")
    m = {r[0]: r[hm.index("h0_mean")] for r in mean}
    t = {r[ht.index("t")]: r[ht.index("r0")] for r in traces}
    assert m == t


def test_single_noise_factor_reports_fit_only(chain, tmp_path, caplog):
    cfg, out, _ = chain
    one = tmp_path / "one.ini"
    one.write_text(SMALL.replace("rc_samples = 3", "rc_samples = 2\nlambdas = 1"))
    o = tmp_path / "o"
    o.mkdir()
    for name in ("recompile_ansatz.circ", "recompile_params.csv"):
        (o / name).write_bytes((out / name).read_bytes())
    assert cli.run(["noisy-run", "--config", str(one), "--out-dir", str(o)]) == 0
    with caplog.at_level(logging.WARNING, logger="dynatherm"):
        assert cli.run(["mitigate", "--config", str(one), "--out-dir", str(o)]) == 0
    assert "without extrapolation" in caplog.text
    m = read_json(o / "mitigation.json")["states"]["dddd"]
    assert m["mode"] == "none" and m["beta_zne"] == m["beta_qc"]
