import json
import subprocess
import sys

import numpy as np
import pytest

from ionmag.cli import (
    ArtifactCache,
    ConfigError,
    UnitError,
    atomic_write,
    main,
    parse_quantity,
    resolve_config,
)

SMALL_CRYSTAL = ["--set", "n_ions=40", "--set", "anneal_steps=200", "--set", "max_iterations=2000"]
QUICK_T2 = ["--set", "shots=20", "--set", 'rabi="2.5 Hz"', "--set", 'delta_b="0.1 uT"']


def run(tmp_path, *argv, out="out"):
    return main([*argv, "--out", str(tmp_path / out), "--cache", str(tmp_path / "cache")])


def summary(tmp_path, out="out"):
    return json.loads((tmp_path / out / "summary.json").read_text())


@pytest.mark.parametrize(
    "text, dim, expected",
    [("0.765 mT", "field", 0.765e-3), ("50 nT", "field", 5e-8), ("0.05 uT", "field", 5e-8),
     ("1 Hz", "frequency", 2 * np.pi), ("6.3 ms", "time", 6.3e-3), ("30 µm", "length", 30e-6),
     ("90 deg", "angle", np.pi / 2), ("1e3Hz", "frequency", 2e3 * np.pi)],
)
def test_parse_quantity(text, dim, expected):
    assert parse_quantity(text, dim) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("text, dim", [("1 Hz", "field"), ("fast", "time"), (1.0, "time"), ("1", "time")])
def test_parse_quantity_rejects(text, dim):
    with pytest.raises(UnitError):
        parse_quantity(text, dim)


def test_resolve_defaults_and_errors():
    cfg = resolve_config("t2", {})
    assert cfg["seed"] == 0 and cfg["params"]["method"] == "dressed"
    assert cfg["params"]["delta_b"] == "0.05 uT"
    for bad in ({"params": {"nope": 1}}, {"seed": -1}, {"command": "sweep"}, {"params": {"shots": 1.5}},
                {"params": {"method": "ramsey"}}, {"extra": 1}):
        with pytest.raises(ConfigError):
            resolve_config("t2", bad)


def test_micromotion_values(tmp_path):
    assert run(tmp_path, "micromotion") == 0
    res = summary(tmp_path)["results"]
    assert res["microwave"]["one_minus_j0"] == pytest.approx(1.57e-5, rel=0.01)
    assert res["rf"]["one_minus_j0"] < 1e-10
    assert (tmp_path / "out" / "micromotion.csv").exists()


def test_exit_codes(tmp_path, capsys):
    assert run(tmp_path, "t2", "--set", 'rabi="1 T"') == 3
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "units" and err["exit_code"] == 3
    assert run(tmp_path, "t2", "--set", "bogus=1") == 2
    assert run(tmp_path, "t2", "--set", "noequals") == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert run(tmp_path, "t2", "--config", str(tmp_path / "bad.json")) == 2
    assert run(tmp_path, "t2", "--config", str(tmp_path / "missing.json")) == 2
    assert run(tmp_path, "t2", "--workers", "0") == 2
    # runtime failure: an MDD time grid cannot be built from a negative duration
    assert run(tmp_path, "t2", "--set", 'method="mdd"', "--set", 't_s="-1 ms"') == 1


def test_t2_is_byte_identical_and_worker_independent(tmp_path):
    assert run(tmp_path, "t2", *QUICK_T2, out="a") == 0
    assert run(tmp_path, "t2", *QUICK_T2, "--workers", "3", out="b") == 0
    for name in ("summary.json", "trace.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    res = summary(tmp_path, "a")["results"]
    assert res["t2_s"] > 0


def test_summary_is_a_valid_config(tmp_path):
    assert run(tmp_path, "t2", *QUICK_T2, "--seed", "5", out="a") == 0
    assert run(tmp_path, "t2", "--config", str(tmp_path / "a" / "summary.json"), out="b") == 0
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()
    assert summary(tmp_path, "b")["config"]["seed"] == 5


def test_crystal_cache_and_corruption(tmp_path):
    assert run(tmp_path, "fieldmap", *SMALL_CRYSTAL) == 0
    entries = sorted((tmp_path / "cache" / "crystal").glob("*.txt"))
    assert len(entries) == 1
    first = (tmp_path / "out" / "fieldmap.csv").read_bytes()
    assert run(tmp_path, "fieldmap", *SMALL_CRYSTAL, out="again") == 0
    assert (tmp_path / "again" / "fieldmap.csv").read_bytes() == first
    entries[0].write_text(entries[0].read_text() + "0,0,0\n")
    assert run(tmp_path, "crystal", *SMALL_CRYSTAL) == 4


def test_cache_missing_digest_is_a_miss(tmp_path):
    cache = ArtifactCache(tmp_path)
    key = ArtifactCache.key("x", {"a": 1}, 0)
    assert cache.get("x", key) is None
    cache.put("x", key, "payload\n")
    assert cache.get("x", key) == "payload\n"
    (tmp_path / "x" / f"{key}.sha256").unlink()
    assert cache.get("x", key) is None
    assert ArtifactCache.key("x", {"a": 1}, 1) != key


def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = tmp_path / "sub" / "f.txt"
    atomic_write(target, "one")
    atomic_write(target, "two")
    assert target.read_text() == "two"
    assert [p.name for p in target.parent.iterdir()] == ["f.txt"]


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ionmag.cli", "micromotion", "--out", str(tmp_path / "o"),
                           "--cache", str(tmp_path / "c")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["format"].startswith("ionmag-summary")
