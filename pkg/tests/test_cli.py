import csv
import json

import pytest
import yaml

from piaid import cli

EXAMPLE_ONE = "0 0.9 0.9 0.1\n0.1 0 0.9 0.9\n0.9 0.1 0 0.9\n0.9 0.9 0.1 0\n"

SMALL = {
    "system": {"K": 4, "M": 2, "N": 2, "D": 1},
    "esn0_grid_db": [10, 20],
    "schemes": ["PIAID-Alg1", "Randomized-PIA"],
    "trials": 6,
    "seed": 1,
    "symbols_per_instance": 50,
    "cdf_esn0_db": 20,
    "window": {"p2_grid_db": [-20, -10, 0, 10, 20], "esn0_db": 40},
}


def write_config(tmp_path, doc, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return str(p)


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0], list(csv.DictReader(lines[1:]))


class TestSelect:
    def test_example_one(self, tmp_path, capsys):
        m = tmp_path / "ex1.txt"
        m.write_text(EXAMPLE_ONE)
        assert cli.main(["select", "--matrix", str(m), "--alpha", "2"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert len(doc["edges"]) == 8
        assert doc["A"] == {"1": [2, 3], "2": [3, 4], "3": [1, 4], "4": [1, 2]}

    def test_yaml_matrix_with_alpha(self, tmp_path, capsys):
        m = tmp_path / "ex1.yaml"
        m.write_text(yaml.safe_dump({"costs": [[float(v) for v in r.split()] for r in EXAMPLE_ONE.splitlines()], "alpha": 2}))
        assert cli.main(["select", "--matrix", str(m)]) == 0
        assert json.loads(capsys.readouterr().out)["alpha"] == 2

    @pytest.mark.parametrize("content, alpha", [("1 2\n3 4 5\n", "1"), ("0 1\n1 0\n", "2"), ("0 1\n1 0\n", None)])
    def test_bad_input(self, tmp_path, content, alpha):
        m = tmp_path / "bad.txt"
        m.write_text(content)
        argv = ["select", "--matrix", str(m)] + (["--alpha", alpha] if alpha else [])
        assert cli.main(argv) == 2

    def test_missing_file(self, tmp_path):
        assert cli.main(["select", "--matrix", str(tmp_path / "nope.txt"), "--alpha", "1"]) == 2


class TestConfig:
    def test_bundled_profiles_validate(self):
        for name in ("fig4", "fig6", "fig7", "fig8", "fig9"):
            cfg = cli.load_config(name)
            if name != "fig4":
                assert cli.build_spec(cfg).resolved_alpha() == 3

    def test_default_profile(self):
        spec = cli.build_spec(cli.load_config("fig6"))
        assert (spec.system.K, spec.system.M, spec.system.N, spec.system.D) == (5, 3, 2, 1)
        assert spec.esn0_grid_db == (0, 5, 10, 15, 20, 25, 30) and len(spec.schemes) == 5

    @pytest.mark.parametrize(
        "patch",
        [{"schemes": []}, {"bogus": 1}, {"system": {"K": 4, "Z": 1}}, {"trials": 0}, {"schemes": ["Nope"]}],
    )
    def test_rejected(self, tmp_path, patch):
        path = write_config(tmp_path, {**SMALL, **patch})
        assert cli.main(["sweep", "--config", path, "--out", str(tmp_path / "o")]) == 2

    def test_infeasible_alpha_is_config_error(self, tmp_path):
        path = write_config(tmp_path, {**SMALL, "alpha": 7})
        assert cli.main(["sweep", "--config", path, "--out", str(tmp_path / "o")]) == 2

    def test_unknown_config(self, tmp_path):
        assert cli.main(["sweep", "--config", str(tmp_path / "none.yaml")]) == 2

    def test_bad_flag_value(self, tmp_path):
        assert cli.main(["sweep", "--config", "fig6", "--trials", "0"]) == 2

    def test_workers_env(self, monkeypatch):
        args = cli.build_parser().parse_args(["sweep", "--config", "fig6"])
        monkeypatch.setenv(cli.WORKERS_ENV, "3")
        assert cli._workers(args, {"workers": 2}) == 3
        monkeypatch.setenv(cli.WORKERS_ENV, "x")
        with pytest.raises(cli.ConfigError):
            cli._workers(args, {})
        monkeypatch.delenv(cli.WORKERS_ENV)
        assert cli._workers(args, {"workers": 2}) == 2


class TestRuns:
    def test_sweep_deterministic_and_seed_override(self, tmp_path):
        path = write_config(tmp_path, SMALL)
        outs = []
        for name, seed in (("a", None), ("b", None), ("c", "7")):
            argv = ["sweep", "--config", path, "--out", str(tmp_path / name)]
            if seed:
                argv += ["--seed", seed]
            assert cli.main(argv) == 0
            outs.append((tmp_path / name / "ser.csv").read_bytes())
        assert outs[0] == outs[1]
        assert outs[0] != outs[2]
        header, rows = read_csv(tmp_path / "a" / "ser.csv")
        assert header == "# schema=piaid.ser/1" and len(rows) == 4
        man = json.loads((tmp_path / "c" / "manifest.json").read_text())
        assert man["spec"]["seed"] == 7
        assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()

    def test_cdf(self, tmp_path):
        path = write_config(tmp_path, SMALL)
        assert cli.main(["cdf", "--config", path, "--out", str(tmp_path)]) == 0
        header, rows = read_csv(tmp_path / "cdf.csv")
        assert header == "# schema=piaid.cdf/1"
        assert len(rows) == 2 * 6 * 4
        for scheme in SMALL["schemes"]:
            vals = sorted(float(r["ser_sample"]) for r in rows if r["scheme"] == scheme)
            assert all(0 <= v <= 1 for v in vals)

    def test_window(self, tmp_path):
        path = write_config(tmp_path, {**SMALL, "trials": 20000})
        assert cli.main(["window", "--config", path, "--out", str(tmp_path)]) == 0
        header, rows = read_csv(tmp_path / "window.csv")
        assert header == "# schema=piaid.window/1"
        ser = [float(r["ser"]) for r in rows]
        assert len(ser) == 5 and 0 < ser.index(max(ser)) < 4
