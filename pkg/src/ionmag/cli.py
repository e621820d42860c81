"""Command-line interface.

Each subcommand reads an optional JSON config of the form::

    {"seed": 0, "params": {"rabi": "1 Hz", "delta_b": "0.05 uT", ...}}

Physical parameters are strings with explicit units.  Frequencies are given
in Hz and mean ``omega / 2 pi``; they are converted to rad/s internally, so
``"rabi": "1 Hz"`` is an effective Rabi frequency of ``2 pi x 1 rad/s``.
Unspecified parameters take the defaults listed in ``SCHEMAS``.

Every run writes ``summary.json`` (results plus the fully resolved config,
which can be passed back through ``--config``) and CSV tables into ``--out``.
Crystals and field maps are kept in a content-addressed cache under
``--cache`` or ``$IONMAG_CACHE`` (default ``~/.cache/ionmag``).

Exit codes: 0 success, 1 runtime failure, 2 config schema error, 3 unit
error, 4 corrupt cache entry.  Failures print a JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .constants import AMU, TWO_PI
from .crystal import (
    MDParams,
    TrapConfig,
    crystal_extents,
    export_csv as crystal_csv,
    load_ensemble,
    rabi_micromotion_factor,
    save_ensemble,
    solve_equilibrium,
)
from .experiment import (
    IonSelection,
    measure_t2,
    scan_pi_duration,
    sensitivity,
    summary_json,
    sweep_t2_grid,
)
from .fieldmap import CoilPair, inhomogeneity_map
from .fieldmap import export_csv as fieldmap_csv
from .spin import DriveSet, HyperfineLevels, zeeman_splittings

EXIT_OK, EXIT_RUNTIME, EXIT_SCHEMA, EXIT_UNITS, EXIT_CACHE = 0, 1, 2, 3, 4
CACHE_ENV = "IONMAG_CACHE"
SUMMARY_FORMAT = "ionmag-summary/1"
SPEED_OF_LIGHT = 299_792_458.0


class ConfigError(Exception):
    exit_code = EXIT_SCHEMA


class UnitError(ConfigError):
    exit_code = EXIT_UNITS


class CacheCorruption(Exception):
    exit_code = EXIT_CACHE


# --- units -------------------------------------------------------------------

_MICRO = ("u", "µ", "μ")
UNITS = {
    "field": {"T": 1.0, "mT": 1e-3, "nT": 1e-9, "pT": 1e-12, "G": 1e-4, "mG": 1e-7,
              **{p + "T": 1e-6 for p in _MICRO}},
    "frequency": {"Hz": TWO_PI, "kHz": TWO_PI * 1e3, "MHz": TWO_PI * 1e6, "GHz": TWO_PI * 1e9},
    "time": {"s": 1.0, "ms": 1e-3, "ns": 1e-9, **{p + "s": 1e-6 for p in _MICRO}},
    "length": {"m": 1.0, "cm": 1e-2, "mm": 1e-3, "nm": 1e-9, **{p + "m": 1e-6 for p in _MICRO}},
    "mass": {"kg": 1.0, "u": AMU},
    "angle": {"rad": 1.0, "deg": np.pi / 180.0},
}
_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([^\s\d].*?)\s*$")


def parse_quantity(text, dimension: str) -> float:
    """``"0.765 mT"`` -> 7.65e-4 (SI; frequencies in rad/s)."""
    if not isinstance(text, str):
        raise UnitError(f"expected a {dimension} string with units, got {text!r}")
    m = _QUANTITY.match(text)
    if not m:
        raise UnitError(f"cannot parse {text!r} as a {dimension} with units")
    value, unit = float(m.group(1)), m.group(2)
    table = UNITS[dimension]
    if unit not in table:
        raise UnitError(f"unit {unit!r} is not a {dimension} unit (allowed: {', '.join(table)})")
    return value * table[unit]


# --- schema ------------------------------------------------------------------

_CRYSTAL = {
    "n_ions": ("int", 10_000),
    "omega_x": ("frequency", "0.7 MHz"),
    "omega_y": ("frequency", "0.58 MHz"),
    "omega_z": ("frequency", "0.12 MHz"),
    "mass": ("mass", "39.962591 u"),
    "crystal_seed": ("int", 2024),
    "anneal_steps": ("int", 1000),
    "max_iterations": ("int", 6000),
}
_COILS = {
    "b0": ("field", "0.765 mT"),
    "coil_radius": ("length", "5 cm"),
    "coil_spacing": ("length", "10 cm"),
}
_PHYSICS = {
    "omega_mw": ("frequency", "25 kHz"),
    "t_s": ("time", "20 ms"),
    "t_pi": ("time", "6.3 ms"),
    "t_add": ("time", "20 ms"),
    "delta_b": ("field", "0.05 uT"),
    "noise_width": ("choice:std,fwhm", "std"),
    "quadratic_zeeman": ("bool", True),
    "model": ("choice:four_level,two_level", "four_level"),
    "sampling": ("choice:monte_carlo,gauss_hermite", "monte_carlo"),
    "shots": ("int", 1000),
    "max_points": ("int", 20_000),
    "span_factor": ("float", 8.0),
}
_ENSEMBLE = {
    "ensemble": ("choice:single,stratified,full", "single"),
    "n_select": ("int", 500),
}

SCHEMAS = {
    "crystal": dict(_CRYSTAL),
    "fieldmap": {**_CRYSTAL, **_COILS},
    "t2": {**_CRYSTAL, **_COILS, **_PHYSICS, **_ENSEMBLE,
           "method": ("choice:dressed,mdd", "dressed"), "rabi": ("frequency", "1 Hz")},
    "sweep": {**_PHYSICS, **_COILS,
              "methods": ("list:choice:dressed,mdd", ["dressed", "mdd"]),
              "delta_b_values": ("list:field", ["0.02 uT", "0.05 uT", "0.1 uT"]),
              "rabi_values": ("list:frequency", ["0.5 Hz", "1 Hz", "2.5 Hz", "5 Hz"]),
              "shots": ("int", 200)},
    "tpi-scan": {**_PHYSICS, **_COILS,
                 "rabi": ("frequency", "1 Hz"),
                 "models": ("list:choice:four_level,two_level", ["four_level", "two_level"]),
                 "t_pi_values": ("list:time", ["0.5 ms", "1 ms", "2 ms", "4 ms", "6.3 ms", "10 ms", "20 ms", "50 ms"]),
                 "shots": ("int", 200)},
    "sensitivity": {**_CRYSTAL, **_COILS, **_PHYSICS, **_ENSEMBLE,
                    "methods": ("list:choice:dressed,mdd", ["dressed", "mdd"]),
                    "ensembles": ("list:choice:single,stratified,full", ["single", "stratified"]),
                    "rabi": ("frequency", "1 Hz"),
                    "sensor_ions": ("int", 10_000),
                    "shots_ensemble": ("int", 100)},
    "micromotion": {"b0": ("field", "0.765 mT"),
                    "mw_wavelength": ("length", "2.38 cm"),
                    "rf_frequency": ("frequency|auto", "auto"),
                    "amplitude": ("length", "30 um")},
}


def _coerce(name: str, kind: str, value):
    if kind.startswith("list:"):
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{name}: expected a non-empty list")
        return [_coerce(name, kind[5:], v) for v in value]
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number")
        return float(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true or false")
        return value
    if kind.startswith("choice:"):
        choices = kind[7:].split(",")
        if value not in choices:
            raise ConfigError(f"{name}: expected one of {choices}, got {value!r}")
        return value
    if kind.endswith("|auto"):
        return "auto" if value == "auto" else _coerce(name, kind[:-5], value)
    parse_quantity(value, kind)  # validate only; resolved configs keep the unit strings
    return value


def resolve_config(command: str, raw: dict) -> dict:
    """Validate ``raw`` and fill in defaults.  Returns ``{"seed", "params"}``."""
    if "config" in raw and "results" in raw:  # a previous summary
        raw = raw["config"]
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown_top = set(raw) - {"command", "seed", "params"}
    if unknown_top:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown_top)}")
    if raw.get("command", command) != command:
        raise ConfigError(f"config is for {raw['command']!r}, not {command!r}")
    schema = SCHEMAS[command]
    params = raw.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params must be a JSON object")
    unknown = set(params) - set(schema)
    if unknown:
        raise ConfigError(f"unknown parameters for {command}: {sorted(unknown)}")
    resolved = {}
    for name, (kind, default) in schema.items():
        resolved[name] = _coerce(name, kind, params.get(name, default))
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    return {"command": command, "seed": seed, "params": resolved}


def _si(params: dict, name: str, command: str):
    kind = SCHEMAS[command][name][0]
    value = params[name]
    if kind.startswith("list:"):
        sub = kind[5:]
        return [parse_quantity(v, sub) if sub in UNITS else v for v in value]
    if kind in UNITS:
        return parse_quantity(value, kind)
    if kind.endswith("|auto") and value != "auto":
        return parse_quantity(value, kind[:-5])
    return value


# --- files and cache ---------------------------------------------------------


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class ArtifactCache:
    """Content-addressed store: ``<root>/<kind>/<key>.txt`` plus a digest file.

    The key hashes the task kind, its parameters, the seed and the artifact
    format version.  The artifact is renamed into place before its digest
    file, so an interrupted write leaves no entry that looks complete; a
    digest that does not match its artifact is reported as corruption.
    """

    FORMAT = 1

    def __init__(self, root):
        self.root = Path(root)

    @staticmethod
    def key(kind: str, params: dict, seed: int) -> str:
        blob = json.dumps({"kind": kind, "params": params, "seed": seed, "format": ArtifactCache.FORMAT},
                          sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def _paths(self, kind, key):
        base = self.root / kind
        return base / f"{key}.txt", base / f"{key}.sha256"

    def get(self, kind: str, key: str) -> str | None:
        data, digest = self._paths(kind, key)
        if not digest.exists():
            return None
        if not data.exists():
            raise CacheCorruption(f"cache entry {kind}/{key} has a digest but no artifact")
        text = data.read_text()
        if hashlib.sha256(text.encode()).hexdigest() != digest.read_text().strip():
            raise CacheCorruption(f"cache entry {kind}/{key} does not match its digest")
        return text

    def put(self, kind: str, key: str, text: str) -> None:
        data, digest = self._paths(kind, key)
        atomic_write(data, text)
        atomic_write(digest, hashlib.sha256(text.encode()).hexdigest() + "\n")


def default_cache_root() -> Path:
    return Path(os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "ionmag")


# --- shared builders ---------------------------------------------------------


def _crystal_params(p: dict) -> dict:
    return {k: p[k] for k in _CRYSTAL}


def _trap(p: dict, cmd: str) -> TrapConfig:
    return TrapConfig(omega_x=_si(p, "omega_x", cmd), omega_y=_si(p, "omega_y", cmd),
                      omega_z=_si(p, "omega_z", cmd), mass=_si(p, "mass", cmd))


def _bundled_matches(p: dict) -> bool:
    return {k: p[k] for k in _CRYSTAL} == {k: v[1] for k, v in _CRYSTAL.items()}


def get_crystal(p: dict, cmd: str, cache: ArtifactCache):
    """Crystal from the cache, the bundled reference, or a fresh solve."""
    params = _crystal_params(p)
    key = cache.key("crystal", params, p["crystal_seed"])
    text = cache.get("crystal", key)
    if text is None:
        if _bundled_matches(p):
            from importlib import resources

            text = (resources.files("ionmag") / "data" / "crystal_ca40_10k.txt").read_text()
        else:
            ens = solve_equilibrium(
                p["n_ions"], _trap(p, cmd),
                MDParams(anneal_steps=p["anneal_steps"], max_iterations=p["max_iterations"]),
                seed=p["crystal_seed"],
            )
            with tempfile.TemporaryDirectory() as tmp:
                path = Path(tmp) / "c.txt"
                save_ensemble(ens, path)
                text = path.read_text()
        cache.put("crystal", key, text)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "c.txt"
        path.write_text(text)
        try:
            return load_ensemble(path), key
        except ValueError as exc:
            raise CacheCorruption(f"cached crystal {key} is unreadable: {exc}") from exc


def get_fieldmap(p: dict, cmd: str, cache: ArtifactCache):
    ens, crystal_key = get_crystal(p, cmd, cache)
    pair = CoilPair(radius=_si(p, "coil_radius", cmd), spacing=_si(p, "coil_spacing", cmd), b0=_si(p, "b0", cmd))
    params = {"crystal": crystal_key, **{k: p[k] for k in _COILS}}
    key = cache.key("fieldmap", params, p["crystal_seed"])
    text = cache.get("fieldmap", key)
    fmap = inhomogeneity_map(pair, ens)
    if text is None:
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "m.csv"
            fieldmap_csv(fmap, path)
            text = path.read_text()
        cache.put("fieldmap", key, text)
    else:
        try:
            frac = np.loadtxt(text.splitlines(), delimiter=",", skiprows=1, ndmin=2)[:, 4]
        except (ValueError, IndexError) as exc:
            raise CacheCorruption(f"cached field map {key} is unreadable: {exc}") from exc
        if len(frac) != len(ens.positions):
            raise CacheCorruption(f"cached field map {key} has the wrong length")
        fmap = type(fmap)(frac, fmap.positions, fmap.b0, fmap.max_axial, fmap.max_radial)
    return ens, fmap, text


def _levels(p):
    return HyperfineLevels() if p["quadratic_zeeman"] else HyperfineLevels.linear()


def _spec_kwargs(p: dict, cmd: str, seed: int) -> dict:
    return dict(
        t_s=_si(p, "t_s", cmd),
        t_pi=_si(p, "t_pi", cmd),
        drives=DriveSet(omega_mw=_si(p, "omega_mw", cmd), nominal_field=_si(p, "b0", cmd)),
        noise_width=p["noise_width"],
        seed=seed,
        shots=p["shots"],
        levels=_levels(p),
        model=p["model"],
        sampling=p["sampling"],
        max_points=p["max_points"],
    )


def _selection(kind: str, p: dict, cmd: str, cache: ArtifactCache, seed: int):
    if kind == "single":
        return IonSelection.single_center_ion()
    ens, fmap, _ = get_fieldmap(p, cmd, cache)
    if kind == "full":
        return IonSelection.from_map(fmap.fractional, fmap.b0)
    return IonSelection.stratified(ens.positions, fmap.fractional, fmap.b0, n_select=p["n_select"], seed=seed)


def _fit_record(m) -> dict:
    rec = {"t2_s": m.t2, "t2_source": m.source, "t2_lower_bound": m.lower_bound, "crossing_t2_s": m.crossing.t2,
           "crossing_lower_bound": m.crossing.lower_bound, "trace_span_s": float(m.spec.times[-1])}
    if m.fit is not None:
        rec.update(fit_t2_s=m.fit.t2, fit_stretch=m.fit.stretch, fit_rabi_rad_s=m.fit.rabi_freq_fit,
                   fit_residual=m.fit.residual, fit_converged=m.fit.converged)
    return rec


# --- commands ----------------------------------------------------------------


def cmd_crystal(cfg, out: Path, cache: ArtifactCache, workers: int):
    p = cfg["params"]
    ens, key = get_crystal(p, "crystal", cache)
    crystal_csv(ens, out / "crystal.csv")
    return {"cache_key": key, "n_ions": len(ens.positions), "extents_m": crystal_extents(ens).tolist(),
            "energy_J": ens.converged_energy, "max_residual_force_N": ens.convergence_metric}


def cmd_fieldmap(cfg, out: Path, cache: ArtifactCache, workers: int):
    p = cfg["params"]
    _, fmap, text = get_fieldmap(p, "fieldmap", cache)
    atomic_write(out / "fieldmap.csv", text)
    return {"max_axial_fraction": fmap.max_axial, "max_radial_fraction": fmap.max_radial,
            "min_fraction": float(fmap.fractional.min()), "max_fraction": float(fmap.fractional.max())}


def cmd_t2(cfg, out: Path, cache: ArtifactCache, workers: int):
    p, seed = cfg["params"], cfg["seed"]
    sel = _selection(p["ensemble"], p, "t2", cache, seed)
    m = measure_t2(p["method"], _si(p, "rabi", "t2"), _si(p, "delta_b", "t2"), ensemble=sel,
                   span_factor=p["span_factor"], workers=workers, **_spec_kwargs(p, "t2", seed))
    atomic_write(out / "trace.csv", m.trace.to_csv())
    return {"method": p["method"], "ensemble": p["ensemble"], **_fit_record(m), "run": m.spec.describe()}


def cmd_sweep(cfg, out: Path, cache: ArtifactCache, workers: int):
    p, seed = cfg["params"], cfg["seed"]
    db = _si(p, "delta_b_values", "sweep")
    om = _si(p, "rabi_values", "sweep")
    kw = _spec_kwargs(p, "sweep", seed)
    results, csv = {}, []
    for method in p["methods"]:
        grid = sweep_t2_grid(db, om, method, workers=workers, span_factor=p["span_factor"], **kw)
        results[method] = {"t2_s": grid.t2, "lower_bound": grid.lower_bound}
        csv.append(grid.to_csv() if not csv else grid.to_csv().split("\n", 1)[1])
    atomic_write(out / "sweep.csv", "".join(csv))
    if {"dressed", "mdd"} <= set(results):
        results["ratio_mdd_over_dressed"] = results["mdd"]["t2_s"] / results["dressed"]["t2_s"]
    return {"delta_b_T": db, "omega_0_rad_s": om, **results}


def cmd_tpi_scan(cfg, out: Path, cache: ArtifactCache, workers: int):
    p, seed = cfg["params"], cfg["seed"]
    tp = _si(p, "t_pi_values", "tpi-scan")
    kw = _spec_kwargs(p, "tpi-scan", seed)
    kw.pop("t_pi")
    kw.pop("model")
    rows, results = ["model,t_pi_s,t2_s,lower_bound"], {}
    for model in p["models"]:
        _, t2, lb = scan_pi_duration(tp, _si(p, "rabi", "tpi-scan"), _si(p, "delta_b", "tpi-scan"),
                                     model=model, workers=workers, span_factor=p["span_factor"], **kw)
        results[model] = {"t2_s": t2, "lower_bound": lb}
        rows += [f"{model},{a:.6e},{b:.9e},{int(c)}" for a, b, c in zip(tp, t2, lb)]
    atomic_write(out / "tpi_scan.csv", "\n".join(rows) + "\n")
    return {"t_pi_s": tp, **results}


def cmd_sensitivity(cfg, out: Path, cache: ArtifactCache, workers: int):
    p, seed = cfg["params"], cfg["seed"]
    omega_0 = _si(p, "rabi", "sensitivity")
    kw = _spec_kwargs(p, "sensitivity", seed)
    reports = {}
    for method in p["methods"]:
        for ens_kind in p["ensembles"]:
            sel = _selection(ens_kind, p, "sensitivity", cache, seed)
            kw["shots"] = p["shots"] if ens_kind == "single" else p["shots_ensemble"]
            m = measure_t2(method, omega_0, _si(p, "delta_b", "sensitivity"), ensemble=sel,
                           span_factor=p["span_factor"], workers=workers, **kw)
            n_ions = 1 if ens_kind == "single" else p["sensor_ions"]
            name = f"{method}_{ens_kind}"
            rec = _fit_record(m)
            if m.fit is not None:
                rep = sensitivity(m.fit, omega_0, n_ions=n_ions, t_add=_si(p, "t_add", "sensitivity"),
                                  duty=m.spec.protocol.duty_factor)
                rec.update(rep.summary())
                rows = ["signal_time_s,S_rad_s_per_rtHz"] + [f"{t:.9e},{s:.9e}" for t, s in zip(rep.times, rep.curve)]
                atomic_write(out / f"sensitivity_{name}.csv", "\n".join(rows) + "\n")
            reports[name] = rec
    return reports


def cmd_micromotion(cfg, out: Path, cache: ArtifactCache, workers: int):
    p = cfg["params"]
    x_m = _si(p, "amplitude", "micromotion")
    rf = _si(p, "rf_frequency", "micromotion")
    if rf == "auto":
        rf = zeeman_splittings(HyperfineLevels(), _si(p, "b0", "micromotion"))[0]
    rows = {"microwave": TWO_PI / _si(p, "mw_wavelength", "micromotion"), "rf": rf / SPEED_OF_LIGHT}
    table = {k: {"wavevector_per_m": kv, "amplitude_m": x_m, "one_minus_j0": 1.0 - rabi_micromotion_factor(kv, x_m)}
             for k, kv in rows.items()}
    lines = ["drive,wavevector_per_m,amplitude_m,one_minus_j0"]
    lines += [f"{k},{v['wavevector_per_m']:.9e},{x_m:.6e},{v['one_minus_j0']:.9e}" for k, v in table.items()]
    atomic_write(out / "micromotion.csv", "\n".join(lines) + "\n")
    return table


COMMANDS = {
    "crystal": cmd_crystal,
    "fieldmap": cmd_fieldmap,
    "t2": cmd_t2,
    "sweep": cmd_sweep,
    "tpi-scan": cmd_tpi_scan,
    "sensitivity": cmd_sensitivity,
    "micromotion": cmd_micromotion,
}


# --- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ionmag", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} task")
        sp.add_argument("--config", type=Path, help="JSON config (or a previous summary.json)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--workers", type=int, default=1, help="worker threads (results do not depend on it)")
        sp.add_argument("--out", type=Path, default=None, help="output directory (default ./ionmag-out/<command>)")
        sp.add_argument("--cache", type=Path, default=None, help=f"cache root (default ${CACHE_ENV} or ~/.cache/ionmag)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                        help="override one parameter, e.g. --set 'rabi=\"2.5 Hz\"'")
    return parser


def _load_raw(args) -> dict:
    raw = {}
    if args.config is not None:
        try:
            raw = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc
        except OSError as exc:
            raise ConfigError(f"{args.config}: {exc.strerror}") from exc
        if isinstance(raw, dict) and "config" in raw and "results" in raw:
            raw = raw["config"]
    raw = dict(raw)
    if args.set:
        params = dict(raw.get("params", {}))
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            try:
                params[key] = json.loads(value)
            except json.JSONDecodeError:
                params[key] = value
        raw["params"] = params
    if args.seed is not None:
        raw["seed"] = args.seed
    return raw


def _error(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.command, _load_raw(args))
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        out = args.out or Path("ionmag-out") / args.command
        cache = ArtifactCache(args.cache or default_cache_root())
        results = COMMANDS[args.command](cfg, Path(out), cache, args.workers)
        summary = {"format": SUMMARY_FORMAT, "version": __version__, "config": cfg, "results": results}
        atomic_write(Path(out) / "summary.json", summary_json(summary))
    except UnitError as exc:
        return _error(exc.exit_code, "units", str(exc))
    except ConfigError as exc:
        return _error(exc.exit_code, "schema", str(exc))
    except CacheCorruption as exc:
        return _error(exc.exit_code, "cache", str(exc))
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable record
        return _error(EXIT_RUNTIME, type(exc).__name__, str(exc))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
