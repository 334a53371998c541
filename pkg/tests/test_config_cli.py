"""Config parsing, hashing, overrides, and the command line surface."""

import json
import os

import numpy as np
import pytest

from ttnquench import analysis
from ttnquench.cli import main, run_experiment
from ttnquench.config import (
    ConfigError,
    apply_overrides,
    config_hash,
    parse_config,
)
from ttnquench.series import TimeSeries
from ttnquench.tensor import KrylovError
from ttnquench.ttn import load_checkpoint

MINIMAL = {
    "lattice": {"rows": 2, "cols": 2},
    "model": {"g": 0.5},
    "evolution": {"t_end": 0.2},
}


def write_toml(tmp_path, text, name="config.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# ---- config ----


def test_minimal_config_fills_defaults():
    spec, sweep = parse_config(MINIMAL)
    assert sweep is None
    ev = spec.resolved["evolution"]
    assert ev["dt"] == 0.005
    assert ev["chi"] == 16
    assert ev["krylov_tol"] == 1e-12
    assert ev["hybrid_every"] == 10
    assert ev["measure_every"] == 1
    assert spec.resolved["run"] == {"name": "quench", "engine": "tdvp1",
                                    "seed": 0}
    assert spec.resolved["model"]["J"] == 1.0
    assert spec.resolved["initial"]["kind"] == "polarized"
    assert spec.resolved["initial"]["size"] is None
    assert len(spec.hash) == 64 and int(spec.hash, 16) >= 0
    assert spec.name == "quench" and spec.engine == "tdvp1"


def test_hash_ignores_formatting_not_values(tmp_path):
    a = write_toml(tmp_path, """
# a comment
[model]
g = 0.5

[lattice]
cols = 2
rows = 2

[evolution]
t_end = 0.2
""", "a.toml")
    b = write_toml(tmp_path, """
[lattice]
rows    = 2
cols    = 2
[evolution]
t_end   = 0.2
[model]
g       = 0.5
""", "b.toml")
    spec_a, _ = parse_config(a)
    spec_b, _ = parse_config(b)
    assert spec_a.hash == spec_b.hash
    spec_c, _ = parse_config(b, overrides=["model.g=0.6"])
    assert spec_c.hash != spec_a.hash
    # the hash covers the resolved config, not the source text
    assert spec_a.hash == config_hash(spec_a.resolved)


def test_unknown_keys_are_named_errors():
    cfg = json.loads(json.dumps(MINIMAL))
    cfg["evolution"]["chii"] = 32
    with pytest.raises(ConfigError, match="evolution.chii"):
        parse_config(cfg)
    with pytest.raises(ConfigError, match="typo"):
        parse_config({**MINIMAL, "typo": {"x": 1}})


def test_type_mismatches_rejected():
    for section, key, value in [
        ("run", "seed", True),
        ("run", "name", 7),
        ("lattice", "rows", 2.5),
        ("model", "g", "strong"),
        ("evolution", "chi", 8.0),
        ("evolution", "t_end", False),
    ]:
        cfg = json.loads(json.dumps(MINIMAL))
        cfg.setdefault(section, {})[key] = value
        with pytest.raises(ConfigError, match=f"{section}.{key}"):
            parse_config(cfg)
    # ints are fine where floats are wanted
    spec, _ = parse_config({**MINIMAL, "model": {"g": 1}})
    assert spec.resolved["model"]["g"] == 1.0


def test_missing_required_keys():
    with pytest.raises(ConfigError, match="model.g"):
        parse_config({"lattice": {"rows": 2, "cols": 2},
                      "evolution": {"t_end": 1.0}})
    with pytest.raises(ConfigError, match="lattice.rows"):
        parse_config({"lattice": {"cols": 2}, "model": {"g": 0.5},
                      "evolution": {"t_end": 1.0}})
    with pytest.raises(ConfigError, match="evolution.t_end"):
        parse_config({"lattice": {"rows": 2, "cols": 2},
                      "model": {"g": 0.5}})


def test_overrides_parse_toml_values():
    raw = json.loads(json.dumps(MINIMAL))
    apply_overrides(raw, ["run.name=alpha", "model.g=0.25",
                          "evolution.chi=32"])
    assert raw["run"]["name"] == "alpha"
    assert raw["model"]["g"] == 0.25 and raw["evolution"]["chi"] == 32
    with pytest.raises(ConfigError):
        apply_overrides({}, ["model.g"])
    with pytest.raises(ConfigError):
        apply_overrides({}, ["g=1"])
    with pytest.raises(ConfigError):
        apply_overrides({}, ["a.b.c=1"])


def test_oracle_engine_site_cap_is_a_parse_error():
    big = {"run": {"engine": "oracle"},
           "lattice": {"rows": 16, "cols": 16},
           "model": {"g": 0.5}, "evolution": {"t_end": 1.0}}
    with pytest.raises(ConfigError, match="20"):
        parse_config(big)
    ok = json.loads(json.dumps(big))
    ok["lattice"] = {"rows": 4, "cols": 5}  # exactly at the cap
    parse_config(ok)


def test_physics_validation():
    checks = [
        ({"run": {"engine": "dmrg"}}, "engine"),
        ({"evolution": {"t_end": -1.0}}, "t_end"),
        ({"evolution": {"dt": 0.0, "t_end": 1.0}}, "dt"),
        ({"evolution": {"chi": 0, "t_end": 1.0}}, "chi"),
        ({"evolution": {"measure_every": 0, "t_end": 1.0}}, "measure_every"),
        ({"observables": {"entropy_links": [0]}}, "entropy link"),
        ({"observables": {"entropy_links": [3]}}, "entropy link"),
    ]
    for patch, needle in checks:
        cfg = json.loads(json.dumps(MINIMAL))
        for section, table in patch.items():
            cfg.setdefault(section, {}).update(table)
        with pytest.raises(ConfigError, match=needle):
            parse_config(cfg)
    # 2x2 pads to a 3-node tree: links 1 and 2 are the only non-root nodes
    cfg = json.loads(json.dumps(MINIMAL))
    cfg["observables"] = {"entropy_links": [1, 2]}
    spec, _ = parse_config(cfg)
    assert spec.entropy_links() == [1, 2]


def test_pattern_and_cut_validation():
    cfg = json.loads(json.dumps(MINIMAL))
    cfg["initial"] = {"kind": "custom"}
    with pytest.raises(ConfigError, match="initial.text"):
        parse_config(cfg)
    cfg["initial"] = {"kind": "square", "size": 2}
    with pytest.raises(ConfigError, match="initial"):
        parse_config(cfg)  # square also needs an offset
    cfg["initial"] = {"kind": "nothing"}
    with pytest.raises(ConfigError):
        parse_config(cfg)
    for cuts, needle in [
        ([{"anchor": [0, 0]}], "direction"),
        ([{"anchor": [5, 0], "direction": "row"}], "off lattice"),
        ([{"anchor": [0, 0], "direction": "spiral"}], "direction"),
        (["cut_row_0"], "anchor"),
    ]:
        cfg = json.loads(json.dumps(MINIMAL))
        cfg["observables"] = {"cuts": cuts}
        with pytest.raises(ConfigError, match=needle):
            parse_config(cfg)
    cfg = json.loads(json.dumps(MINIMAL))
    cfg["observables"] = {"cuts": [{"anchor": [1, 1], "direction": "col"}]}
    spec, _ = parse_config(cfg)
    assert spec.cuts() == [(3, "col")]


def test_stripe_interface_echoed():
    cfg = {"lattice": {"rows": 8, "cols": 16, "col_boundary": "open"},
           "model": {"g": 0.3}, "evolution": {"t_end": 1.0},
           "initial": {"kind": "stripe", "interface_col": 7}}
    spec, _ = parse_config(cfg)
    assert spec.resolved["initial"]["interface_col"] == 7
    grid = np.asarray(spec.pattern().values).reshape(8, 16)
    assert np.all(grid[:, :8] == -1) and np.all(grid[:, 8:] == 1)


def test_sweep_parsing_and_members():
    cfg = json.loads(json.dumps(MINIMAL))
    cfg["sweep"] = {"parameter": "evolution.chi", "values": [2, 4, 8],
                    "reference": 2}
    spec, sweep = parse_config(cfg)
    assert sweep.parameter == "evolution.chi"
    assert sweep.values == (2, 4, 8) and sweep.reference == 2
    members = sweep.members()
    assert [m.resolved["evolution"]["chi"] for m in members] == [2, 4, 8]
    assert len({m.hash for m in members}) == 3
    assert all("sweep" not in m.resolved for m in members)
    # base spec itself resolves without the sweep section
    assert spec.resolved["evolution"]["chi"] == 16

    for patch, needle in [
        ({"values": []}, "non-empty"),
        ({"reference": 3}, "reference"),
        ({"parameter": "chi"}, "section.key"),
        ({"parameter": "nosuch.chi"}, "section.key"),
    ]:
        bad = json.loads(json.dumps(cfg))
        bad["sweep"].update(patch)
        with pytest.raises(ConfigError):
            parse_config(bad)


# ---- command line ----

ORACLE_TOML = """
[run]
name = "tiny"
engine = "oracle"

[lattice]
rows = 2
cols = 2

[model]
g = 0.5

[evolution]
t_end = 0.2
dt = 0.01
measure_every = 5
"""


def test_run_command_writes_series_and_manifest(tmp_path):
    cfg = write_toml(tmp_path, ORACLE_TOML)
    out = tmp_path / "runs"
    assert main(["run", cfg, "-o", str(out)]) == 0
    rundir = out / "tiny"
    files = sorted(os.listdir(rundir))
    assert files == ["manifest.json", "series.jsonl"]
    manifest = json.loads((rundir / "manifest.json").read_text())
    spec, _ = parse_config(cfg)
    assert manifest["name"] == "tiny"
    assert manifest["config_hash"] == spec.hash
    assert manifest["seed"] == 0
    assert manifest["status"] == "ok"
    assert manifest["outputs"] == ["series.jsonl"]
    assert manifest["config"] == spec.resolved
    assert manifest["wall_seconds"] >= 0
    assert manifest["peak_rss_kb"] > 0
    assert "package_version" in manifest

    series = TimeSeries.read(rundir / "series.jsonl")
    assert series.meta["name"] == "tiny"
    assert series.meta["config_hash"] == spec.hash
    # t=0, then steps 5, 10, 15, 20
    assert np.allclose(series.t, [0.0, 0.05, 0.1, 0.15, 0.2])
    assert np.all(series.column("sz")[0] == -1.0)


def test_run_reruns_are_byte_identical(tmp_path):
    text = """
[run]
name = "tree"
engine = "tdvp2"
seed = 7

[lattice]
rows = 2
cols = 3

[model]
g = 1.0

[evolution]
t_end = 0.05
dt = 0.01
chi = 8
checkpoint_minutes = 60.0

[observables]
cuts = [{anchor = [0, 1], direction = "row"}]
entropy_links = [1, 2]
"""
    cfg = write_toml(tmp_path, text)
    assert main(["run", cfg, "-o", str(tmp_path / "r1")]) == 0
    assert main(["run", cfg, "-o", str(tmp_path / "r2")]) == 0
    first = (tmp_path / "r1" / "tree" / "series.jsonl").read_bytes()
    second = (tmp_path / "r2" / "tree" / "series.jsonl").read_bytes()
    assert first == second

    manifest = json.loads(
        (tmp_path / "r1" / "tree" / "manifest.json").read_text())
    assert sorted(manifest["outputs"]) == ["checkpoint.bin", "series.jsonl"]
    state, stamp = load_checkpoint(tmp_path / "r1" / "tree" / "checkpoint.bin")
    assert stamp == manifest["config_hash"]
    series = TimeSeries.read(tmp_path / "r1" / "tree" / "series.jsonl")
    assert "cut_row_1" in series.samples[0]
    assert len(series.samples[0]["link_entropy"]) == 2


def test_run_failure_marks_manifest_and_keeps_prefix(tmp_path):
    text = ORACLE_TOML + """
[observables]
"""
    cfg = write_toml(tmp_path, text)
    out = tmp_path / "runs"
    with pytest.raises(KrylovError):
        main(["run", cfg, "-o", str(out),
              "--set", "evolution.dt=5.0",
              "--set", "evolution.t_end=10.0",
              "--set", "evolution.krylov_max_dim=3"])
    rundir = out / "tiny"
    manifest = json.loads((rundir / "manifest.json").read_text())
    assert manifest["status"] == "error"
    assert "KrylovError" in manifest["error"]
    series = TimeSeries.read(rundir / "series.jsonl")
    assert "KrylovError" in series.meta["error"]
    assert len(series) >= 1  # the t=0 sample still parses


def test_truncated_stream_is_a_parseable_prefix(tmp_path):
    cfg = write_toml(tmp_path, ORACLE_TOML)
    assert main(["run", cfg, "-o", str(tmp_path / "runs")]) == 0
    path = tmp_path / "runs" / "tiny" / "series.jsonl"
    whole = TimeSeries.read(path)
    data = path.read_bytes()
    path.write_bytes(data[:len(data) - 25])  # cut into the last record
    part = TimeSeries.read(path)
    assert len(part) == len(whole) - 1
    assert part.meta["config_hash"] == whole.meta["config_hash"]
    np.testing.assert_array_equal(part.t, whole.t[:-1])


RABI_TOML = """
[run]
name = "rabi"
engine = "oracle"

[lattice]
rows = 1
cols = 1

[model]
g = 1.0

[evolution]
t_end = 30.0
dt = 0.05
"""


def test_spectrum_and_peaks_commands(tmp_path, capsys):
    cfg = write_toml(tmp_path, RABI_TOML)
    assert main(["run", cfg, "-o", str(tmp_path / "runs")]) == 0
    series = str(tmp_path / "runs" / "rabi" / "series.jsonl")

    spec_file = tmp_path / "spec.txt"
    assert main(["spectrum", series, "--site", "0",
                 "-o", str(spec_file)]) == 0
    lines = spec_file.read_text().splitlines()
    assert lines[0].startswith("# window=hamming")
    assert lines[1] == "# omega magnitude"
    grid = np.array([[float(x) for x in ln.split()] for ln in lines[2:]])
    assert grid.shape[0] == 601 // 2 + 1

    capsys.readouterr()
    assert main(["peaks", series, "--site", "0"]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0] == "# omega height omega_interp"
    strongest = [float(x) for x in rows[1].split()]
    # one spin precesses at twice the field
    assert abs(strongest[2] - 2.0) <= 2 * np.pi / 30.0

    # a window with fewer than 4 samples cannot be transformed
    assert main(["spectrum", series, "--site", "0",
                 "--t-max", "0.1"]) == 1


def test_front_fit_command(tmp_path, capsys):
    text = """
[run]
name = "front"
engine = "oracle"

[lattice]
rows = 4
cols = 4

[model]
g = 0.5

[evolution]
t_end = 2.5
dt = 0.05
measure_every = 2

[initial]
kind = "stripe"
interface_col = 0

[observables]
cuts = [{anchor = [1, 1], direction = "row"}]
"""
    cfg = write_toml(tmp_path, text)
    assert main(["run", cfg, "-o", str(tmp_path / "runs")]) == 0
    series = str(tmp_path / "runs" / "front" / "series.jsonl")
    capsys.readouterr()
    code = main(["front-fit", series, "--cut", "cut_row_5",
                 "--threshold", "0.005", "--at", "2.5"])
    out = capsys.readouterr().out
    assert code == 0
    assert out.startswith("velocity ")
    assert "distance_by_t=2.5 2" in out
    # a threshold the far slot never reaches leaves too few points to fit
    assert main(["front-fit", series, "--cut", "cut_row_5",
                 "--threshold", "0.01"]) == 1
    with pytest.raises(SystemExit, match="cut_col_9"):
        main(["front-fit", series, "--cut", "cut_col_9",
              "--threshold", "0.01"])


def test_counts_command(capsys):
    assert main(["counts", "4"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out == [f"{kind} {analysis.excitation_count(4, kind)}"
                   for kind in analysis.COUNT_KINDS]
    assert main(["counts", "3"]) == 1  # below the validity floor


def test_perturb_command(capsys):
    assert main(["perturb", "16", "--g", "0.5"]) == 0
    out = dict(line.split() for line in capsys.readouterr().out.splitlines())
    assert float(out["e0"]) == -8.0
    assert float(out["delta01"]) == 7.8125
    assert float(out["delta12"]) == 4.1875
    assert float(out["delta02"]) == 12.0


def test_map_dump_command(capsys):
    assert main(["map-dump", "4", "4"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("# scheme=hilbert")
    assert len(lines) == 17
    assert lines[1].split() == ["0", "0", "0"]

    assert main(["map-dump", "3", "5"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("# scheme=snake")
    assert len(lines) == 16


SWEEP_TOML = """
[run]
name = "conv"
engine = "tdvp1"
seed = 3

[lattice]
rows = 2
cols = 3

[model]
g = 0.8

[evolution]
t_end = 0.1
dt = 0.01

[sweep]
parameter = "evolution.chi"
values = [4, 8]
reference = 1
"""


def test_sweep_command_degenerate_chi(tmp_path, capsys, monkeypatch):
    # on six sites every cut caps at rank 4, so both members run the same
    # physics and must agree to roundoff
    monkeypatch.setenv("TTNQUENCH_WORKERS", "2")
    cfg = write_toml(tmp_path, SWEEP_TOML)
    assert main(["sweep", cfg, "-o", str(tmp_path / "runs")]) == 0
    base = tmp_path / "runs" / "conv"
    summary = json.loads((base / "sweep.json").read_text())
    assert summary["parameter"] == "evolution.chi"
    assert summary["values"] == [4, 8] and summary["reference"] == 1
    assert [m["status"] for m in summary["members"]] == ["ok", "ok"]
    assert summary["members"][0]["max_sz_deviation"] <= 1e-8
    assert summary["members"][1]["max_sz_deviation"] == 0.0
    for i in (0, 1):
        d = base / f"member_{i:02d}"
        assert (d / "series.jsonl").exists() and (d / "manifest.json").exists()
        assert summary["members"][i]["dir"] == str(d)
        assert "final_energy" in summary["members"][i]


def test_sweep_member_failure_recorded(tmp_path):
    text = ORACLE_TOML + """
[sweep]
parameter = "evolution.krylov_max_dim"
values = [30, 3]
reference = 0
"""
    cfg = write_toml(tmp_path, text)
    code = main(["sweep", cfg, "-o", str(tmp_path / "runs"),
                 "--set", "evolution.dt=5.0",
                 "--set", "evolution.t_end=10.0"])
    assert code == 0  # the reference member succeeded
    summary = json.loads((tmp_path / "runs" / "tiny" / "sweep.json")
                         .read_text())
    assert summary["members"][0]["status"] == "ok"
    assert summary["members"][1]["status"] == "error"
    assert "KrylovError" in summary["members"][1]["error"]


def test_sweep_without_section_fails(tmp_path):
    cfg = write_toml(tmp_path, ORACLE_TOML)
    assert main(["sweep", cfg, "-o", str(tmp_path / "runs")]) == 2


def test_config_error_exit_code(tmp_path):
    cfg = write_toml(tmp_path, ORACLE_TOML + "\n[evolution2]\nx = 1\n")
    assert main(["run", cfg, "-o", str(tmp_path / "runs")]) == 2


def test_run_experiment_returns_series(tmp_path):
    spec, _ = parse_config({**MINIMAL,
                            "run": {"engine": "oracle", "name": "direct"}})
    manifest, series = run_experiment(spec, str(tmp_path / "d"))
    assert manifest["status"] == "ok"
    assert manifest["info"]["final_norm"] == pytest.approx(1.0, abs=1e-12)
    assert len(series) == int(round(0.2 / 0.005)) + 1
