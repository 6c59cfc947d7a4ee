import csv
import json
import math
import subprocess
import sys

import pytest

from raylbe import cli, config
from raylbe import scattering as sc
from raylbe.errors import ConfigError

SMALL_SCATTER = ["--set", "scatter.r=[0.5, 12.0, 4]", "--set", "scatter.speed=[1.0, 3.0, 3]"]


# ---------------------------------------------------------------- config

def test_default_file_matches_builtin_defaults():
    a = config.load_text(config.default_text())
    b = config.from_dict({})
    assert a.raw == b.raw
    assert a.hash() == b.hash()


def test_hash_is_stable_and_order_free():
    one = "T: 0.5\nseeds: [4]\n"
    two = "seeds: [4]\nT: 0.5\n"
    assert config.load_text(one).hash() == config.load_text(two).hash()
    assert config.load_text(one).hash() != config.load_text("T: 0.6\nseeds: [4]\n").hash()


def test_overrides_merge_into_nested_sections():
    ov = cli.parse_overrides(["samples.walkers=2000", "epsilons=[0.1]", "lbe.kinematics=symmetric"])
    assert ov == {"samples": {"walkers": 2000}, "epsilons": [0.1], "lbe": {"kinematics": "symmetric"}}
    run = config.from_dict({}, overrides=ov)
    assert run.samples["walkers"] == 2000
    assert run.samples["trajectories"] == 3000
    assert run.epsilons == [0.1]
    with pytest.raises(ConfigError):
        cli.parse_overrides(["samples.walkers"])


def test_unknown_key_reports_line_number():
    text = "T: 1.0\nseeds: [1]\nwalkers: 10\n"
    with pytest.raises(ConfigError, match=r"run\.yaml:3: walkers: unknown key"):
        config.load_text(text, "run.yaml")


def test_malformed_potential_reports_line_number():
    text = "T: 1.0\npotential:\n  kind: power_law\n  s: 1.5\n"
    with pytest.raises(ConfigError, match=r"run\.yaml:2: potential"):
        config.load_text(text, "run.yaml")


def test_yaml_syntax_error_reports_line_number():
    with pytest.raises(ConfigError, match=r"bad\.yaml:\d+: YAML parse error"):
        config.load_text("T: 1.0\nseeds: [1, 2\n", "bad.yaml")


def test_point_mass_background_is_flagged():
    # changing the kind replaces the section instead of inheriting the default's parameters
    run = config.from_dict({"background": {"kind": "point"}})
    assert run.raw["background"] == {"kind": "point"}
    assert any("point mass" in w for w in run.warnings)
    with pytest.raises(ConfigError):
        config.from_dict({"background": {"kind": "maxwellian", "drift": [1, 0, 0]}})


def test_derived_scalings():
    sim = config.from_dict({}).sim(0.01)
    assert sim.n_background == 10_000
    assert sim.M == pytest.approx(math.log(100))
    assert sim.V1 == pytest.approx(1 / math.log(100))
    assert sim.delta == pytest.approx(0.1)
    assert sim.R == pytest.approx(0.01 ** (-1 / 4))
    assert 0 < sim.xi < 1


# ---------------------------------------------------------------- command line

def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_validate_passes_on_defaults(tmp_path):
    assert cli.main(["validate", "-o", str(tmp_path)]) == 0
    rows = _read_csv(tmp_path / "validate.csv")
    assert rows and all(r["passed"] == "1" for r in rows)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["command"] == "validate"
    assert man["config_hash"] == config.from_dict({}).hash()


def test_malformed_config_exits_with_config_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("T: 1.0\npotential:\n  kind: power_law\n  s: 1.5\n")
    assert cli.main(["validate", str(bad), "-o", str(tmp_path / "out")]) == 1
    assert f"{bad}:2" in capsys.readouterr().err


def test_compare_refuses_tiny_ensembles(tmp_path, capsys):
    code = cli.main(["compare", "-o", str(tmp_path), "--epsilon", "0.1", "--seed", "1", "--samples", "10"])
    assert code == 1
    assert "1000" in capsys.readouterr().err


def test_scatter_output_is_deterministic_and_correct(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["scatter", "-o", str(a)] + SMALL_SCATTER) == 0
    assert cli.main(["scatter", "-o", str(b)] + SMALL_SCATTER) == 0
    assert (a / "scatter.csv").read_bytes() == (b / "scatter.csv").read_bytes()
    rows = _read_csv(a / "scatter.csv")
    assert len(rows) == 12
    p = config.from_dict({}).potential
    for row in rows[::5]:
        th = sc.deviation_angle(p, float(row["r"]), float(row["speed"]), 1e-10)
        assert float(row["theta"]) == pytest.approx(th, rel=1e-9, abs=1e-12)
    # beyond the cutoff the truncated potential does nothing
    far = [r for r in rows if float(r["r"]) > 10.0]
    assert far and all(float(r["theta_R"]) == 0.0 for r in far)


def test_simulate_commands_write_their_files(tmp_path):
    md = ["simulate-md", "-o", str(tmp_path / "md"), "--epsilon", "0.1", "--seed", "2", "--samples", "3",
          "--t-end", "0.05"]
    assert cli.main(md) == 0
    cell = tmp_path / "md" / "eps0.1_seed2"
    assert {p.name for p in cell.iterdir()} >= {"states.csv", "trees.jsonl", "classification.csv"}
    assert len(_read_csv(cell / "states.csv")) == 3
    lbe = ["simulate-lbe", "-o", str(tmp_path / "lbe"), "--epsilon", "0.1", "--seed", "2", "--samples", "500",
           "--times", "0.1", "0.2"]
    assert cli.main(lbe) == 0
    cell = tmp_path / "lbe" / "eps0.1_seed2"
    walkers = _read_csv(cell / "walkers.csv")
    assert sorted({float(w["t"]) for w in walkers}) == [0.1, 0.2]
    assert len(walkers) == 1000
    assert len((cell / "trees.jsonl").read_text().splitlines()) == 500
    hist = _read_csv(cell / "histogram.csv")
    for t in (0.1, 0.2):
        assert sum(float(h["value"]) for h in hist if float(h["t"]) == t) == pytest.approx(1.0)


def test_simulate_lbe_is_reproducible(tmp_path):
    args = ["simulate-lbe", "--epsilon", "0.1", "--seed", "5", "--samples", "300", "--times", "0.2"]
    assert cli.main(args + ["-o", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["-o", str(tmp_path / "b")]) == 0
    for name in ("walkers.csv", "trees.jsonl", "histogram.csv", "weak.csv"):
        assert (tmp_path / "a" / "eps0.1_seed5" / name).read_bytes() == \
            (tmp_path / "b" / "eps0.1_seed5" / name).read_bytes()


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "raylbe.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "raylbe" in res.stdout
    res = subprocess.run([sys.executable, "-m", "raylbe.cli", "validate", "--set", "T=-1", "-o", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 1
