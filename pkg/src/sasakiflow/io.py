"""Configuration, time-series CSV, checkpoints and trajectory directories.

Config files are flat ``dotted.key = value`` text (``#`` starts a comment) or
JSON, nested or flat, with the same key set. Every artifact is written
deterministically: identical inputs give identical bytes.
"""
from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
import os
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import flow as fl
from . import functionals as fn
from . import geometry as geo
from .errors import CorruptArtifact, ParseError, ValidationError

CHECKPOINT_FORMAT = "sasakiflow-checkpoint"
CHECKPOINT_VERSION = 1
OUTPUT_ROOT_ENV = "SASAKIFLOW_OUTPUT_ROOT"
INIT_KINDS = ("zero", "even-sample", "full-sample", "file")
FORMATS = ("csv", "npz")

CSV_COLUMNS = (
    "t", "I", "J", "F0", "F_a", "F_b", "K", "osc", "sup_phi", "mean_phi_mu0", "mean_phi_muphi",
    "sup_R", "inf_R", "sup_h", "sup_grad_h", "alpha", "m", "c_t", "lemma31_Q", "norm_C0", "norm_C2",
)


@dataclass(frozen=True)
class InitConfig:
    kind: str = "even-sample"
    amplitude: float = 0.1
    seed: int = 0
    mode_count: int = 3
    margin: float = 0.1
    file: str = ""

    def problems(self) -> list[str]:
        out = []
        if self.kind not in INIT_KINDS:
            out.append(f"init.kind must be one of {', '.join(INIT_KINDS)}, got {self.kind!r}")
        if not (self.amplitude >= 0 and math.isfinite(self.amplitude)):
            out.append(f"init.amplitude must be a nonnegative number, got {self.amplitude!r}")
        if not (isinstance(self.seed, int) and self.seed >= 0):
            out.append(f"init.seed must be a nonnegative integer, got {self.seed!r}")
        if not (isinstance(self.mode_count, int) and self.mode_count >= 1):
            out.append(f"init.mode_count must be a positive integer, got {self.mode_count!r}")
        if not (0 < self.margin < 1):
            out.append(f"init.margin must lie in (0, 1), got {self.margin!r}")
        if self.kind == "file":
            if not self.file:
                out.append("init.file is required when init.kind = file")
            elif not Path(self.file).is_file():
                out.append(f"init.file {self.file!r} does not exist")
        return out

    def sample_spec(self) -> geo.SampleSpec:
        sym = "even" if self.kind == "even-sample" else "full"
        return geo.SampleSpec(mode_count=self.mode_count, amplitude=self.amplitude, symmetry=sym,
                              margin=self.margin)


@dataclass(frozen=True)
class FunctionalsConfig:
    path_nodes: int = 33

    def problems(self) -> list[str]:
        if not (isinstance(self.path_nodes, int) and self.path_nodes >= 9):
            return [f"functionals.path_nodes must be an integer >= 9, got {self.path_nodes!r}"]
        return []


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "runs/default"
    formats: tuple = FORMATS

    def problems(self) -> list[str]:
        bad = [f for f in self.formats if f not in FORMATS]
        return [f"output.formats entries must be in {FORMATS}, got {bad}"] if bad else []


@dataclass(frozen=True)
class RunConfig:
    geometry: geo.GeometryConfig = field(default_factory=geo.GeometryConfig)
    flow: fl.FlowConfig = field(default_factory=fl.FlowConfig)
    init: InitConfig = field(default_factory=InitConfig)
    functionals: FunctionalsConfig = field(default_factory=FunctionalsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def problems(self) -> list[str]:
        return (self.geometry.problems() + self.flow.problems() + self.init.problems()
                + self.functionals.problems() + self.output.problems())

    def validate(self) -> "RunConfig":
        p = self.problems()
        if p:
            raise ValidationError(p)
        return self

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["output"]["formats"] = list(d["output"]["formats"])
        return d

    def flat(self) -> dict:
        return {f"{s}.{k}": v for s, sub in self.as_dict().items() for k, v in sub.items()}

    def path_spec(self) -> fn.PathSpec:
        return fn.PathSpec("linear", self.functionals.path_nodes)


_SECTION_CLS = {"geometry": geo.GeometryConfig, "flow": fl.FlowConfig, "init": InitConfig,
                "functionals": FunctionalsConfig, "output": OutputConfig}
KNOWN_KEYS = tuple(f"{s}.{f.name}" for s, cls in _SECTION_CLS.items() for f in dataclasses.fields(cls))


def _coerce(text: str):
    t = text.strip()
    if len(t) >= 2 and t[0] == t[-1] and t[0] in "\"'":
        return t[1:-1]
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    if "," in t:
        return [_coerce(p) for p in t.split(",") if p.strip()]
    return t


def _convert(key: str, value, default):
    """Bring a parsed value to the default's type; mismatches become validation problems."""
    if isinstance(default, bool):
        return value
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, tuple):
        return tuple(value) if isinstance(value, (list, tuple)) else (value,)
    return value


def _type_problems(flat: dict) -> list[str]:
    out = []
    for key, value in flat.items():
        s, k = key.split(".", 1)
        default = getattr(_SECTION_CLS[s](), k)
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                out.append(f"{key} must be numeric, got {value!r}")
            elif isinstance(default, int) and not isinstance(value, int):
                out.append(f"{key} must be an integer, got {value!r}")
        elif isinstance(default, str) and not isinstance(value, str):
            out.append(f"{key} must be a string, got {value!r}")
    return out


def parse_dotted(text: str) -> dict:
    """``key = value`` lines to a flat dict; raises :class:`ParseError` with the line."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ParseError(f"unknown key {key!r}", line=lineno, key=key)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", line=lineno, key=key)
        out[key] = _coerce(value)
    return out


def _flatten_json(obj: dict) -> dict:
    out = {}
    for k, v in obj.items():
        if isinstance(v, dict):
            if k not in _SECTION_CLS:
                raise ParseError(f"unknown section {k!r}", key=k)
            for kk, vv in v.items():
                out[f"{k}.{kk}"] = vv
        else:
            out[k] = v
    for k in out:
        if k not in KNOWN_KEYS:
            raise ParseError(f"unknown key {k!r}", key=k)
    return out


def parse_text(text: str) -> dict:
    if text.lstrip().startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON ({e.msg})", line=e.lineno) from None
        if not isinstance(obj, dict):
            raise ParseError("JSON config must be an object")
        return _flatten_json(obj)
    return parse_dotted(text)


def config_from_flat(flat: dict) -> RunConfig:
    """Apply ``flat`` over the defaults and validate, reporting every problem at once."""
    problems = _type_problems(flat)
    if problems:
        raise ValidationError(problems)
    parts = {}
    for s, cls in _SECTION_CLS.items():
        base = cls()
        upd = {k.split(".", 1)[1]: _convert(k, v, getattr(base, k.split(".", 1)[1]))
               for k, v in flat.items() if k.startswith(s + ".")}
        parts[s] = dataclasses.replace(base, **upd)
    return RunConfig(**parts).validate()


def load_config(path) -> RunConfig:
    """Read, parse and validate a config file; defaults fill every missing key."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(f"{path}: not UTF-8 ({e.reason})") from None
    return config_from_flat(parse_text(text))


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or ".")


def resolve_output(path) -> Path:
    """Relative output paths live under the output root (``$SASAKIFLOW_OUTPUT_ROOT`` or cwd)."""
    p = Path(path)
    return p if p.is_absolute() else output_root() / p


def write_config_echo(cfg: RunConfig, directory) -> Path:
    p = Path(directory) / "config.json"
    p.write_text(json.dumps(cfg.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return p


# ---------------------------------------------------------------------------
# initial data


def initial_potential(bg: geo.Background, cfg: RunConfig) -> np.ndarray:
    init = cfg.init
    if init.kind == "zero":
        return np.zeros(bg.N)
    if init.kind == "file":
        ck = read_checkpoint(init.file)
        if not np.array_equal(ck.x, bg.x):
            raise ValidationError([f"init.file grid ({ck.x.size} nodes) does not match geometry.grid_nodes"])
        return ck.psi + ck.alpha
    return geo.sample_potential(bg, init.sample_spec(), init.seed).values


# ---------------------------------------------------------------------------
# time series


def timeseries_columns(traj: fl.Trajectory) -> dict[str, np.ndarray]:
    from .verification import monitor_series

    f = traj.functionals
    mon = monitor_series(traj)
    cols = {
        "t": traj.t, "I": f["I"], "J": f["J"], "F0": f["F0"], "F_a": f["F_a"], "F_b": f["F_b"],
        "K": f["K"], "osc": f["osc"], "sup_phi": f["sup_phi"], "mean_phi_mu0": f["mean_phi_mu0"],
        "mean_phi_muphi": f["mean_phi_muphi"],
        "sup_R": np.max(traj.R, axis=1), "inf_R": np.min(traj.R, axis=1),
        "sup_h": mon["sup_abs_h"], "sup_grad_h": mon["sup_grad_h"],
        "alpha": traj.alpha, "m": traj.m, "c_t": traj.c, "lemma31_Q": traj.lemma31_Q,
        "norm_C0": f["norm_C0"], "norm_C2": f["norm_C2"],
    }
    return {k: cols[k] for k in CSV_COLUMNS}


def _fmt(v: float) -> str:
    return format(float(v), ".17e")


def write_timeseries(traj: fl.Trajectory, path) -> Path:
    """CSV with the fixed header, one row per sample, 17 significant digits."""
    cols = timeseries_columns(traj)
    n = len(traj)
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for i in range(n):
        buf.write(",".join(_fmt(cols[k][i]) for k in CSV_COLUMNS) + "\n")
    p = Path(path)
    p.write_bytes(buf.getvalue().encode("ascii"))
    return p


def read_timeseries(path) -> dict[str, np.ndarray]:
    p = Path(path)
    with p.open(encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
    if tuple(header) != CSV_COLUMNS:
        raise CorruptArtifact(f"{p}: unexpected CSV header")
    data = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
    return {k: data[:, i] for i, k in enumerate(header)}


# ---------------------------------------------------------------------------
# checkpoints


@dataclass(frozen=True, eq=False)
class Checkpoint:
    t: float
    x: np.ndarray
    psi: np.ndarray
    alpha: float
    h: np.ndarray
    config: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION


def _digest(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_checkpoint(ck: Checkpoint, path) -> Path:
    """Versioned JSON; floats round-trip exactly through ``repr``."""
    payload = {
        "format": CHECKPOINT_FORMAT, "version": ck.version, "config": ck.config,
        "t": float(ck.t), "alpha": float(ck.alpha),
        "x": [float(v) for v in ck.x], "psi": [float(v) for v in ck.psi], "h": [float(v) for v in ck.h],
    }
    payload["sha256"] = _digest(payload)
    p = Path(path)
    p.write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
    return p


def read_checkpoint(path) -> Checkpoint:
    p = Path(path)
    try:
        payload = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CorruptArtifact(f"{p}: unreadable checkpoint ({e})") from None
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CorruptArtifact(f"{p}: not a sasakiflow checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CorruptArtifact(f"{p}: unsupported checkpoint version {payload.get('version')!r}")
    digest = payload.pop("sha256", None)
    if digest != _digest(payload):
        raise CorruptArtifact(f"{p}: checksum mismatch")
    x, psi, h = (np.asarray(payload[k], dtype=float) for k in ("x", "psi", "h"))
    if not (x.size == psi.size == h.size):
        raise CorruptArtifact(f"{p}: field lengths disagree")
    grid = payload["config"].get("geometry", {}).get("grid_nodes") if payload["config"] else None
    if grid is not None and grid != x.size:
        raise CorruptArtifact(f"{p}: grid has {x.size} nodes, config says {grid}")
    return Checkpoint(t=payload["t"], x=x, psi=psi, alpha=payload["alpha"], h=h,
                      config=payload["config"], version=payload["version"])


def checkpoint_from_state(traj: fl.Trajectory, i: int = -1, config: dict | None = None) -> Checkpoint:
    return Checkpoint(t=float(traj.t[i]), x=traj.bg.x.copy(), psi=traj.psi[i].copy(),
                      alpha=float(traj.alpha[i]), h=traj.h[i].copy(), config=config or {})


# ---------------------------------------------------------------------------
# trajectory directories

_TRAJ_ARRAYS = ("t", "psi", "t_rec", "m_rec", "g_rec")


def _write_npz(path: Path, arrays: dict) -> None:
    """``.npz`` with fixed zip timestamps so reruns are byte-identical."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            b = io.BytesIO()
            np.lib.format.write_array(b, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), b.getvalue())


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_trajectory(traj: fl.Trajectory, cfg: RunConfig, directory) -> Path:
    """``config.json``, ``timeseries.csv``, ``trajectory.npz``, ``checkpoint.json`` and a manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = [write_config_echo(cfg, d)]
    if "csv" in cfg.output.formats:
        written.append(write_timeseries(traj, d / "timeseries.csv"))
    arrays = {k: getattr(traj, k) for k in _TRAJ_ARRAYS}
    arrays["alpha0"] = np.array(np.nan if traj.alpha0 is None else traj.alpha0)
    _write_npz(d / "trajectory.npz", arrays)
    written.append(d / "trajectory.npz")
    written.append(write_checkpoint(checkpoint_from_state(traj, -1, cfg.as_dict()), d / "checkpoint.json"))
    manifest = {p.name: _sha256_file(p) for p in written}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return d


def load_trajectory(directory) -> tuple[RunConfig, fl.Trajectory]:
    """Inverse of :func:`save_trajectory`; any missing or altered file raises :class:`CorruptArtifact`."""
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise CorruptArtifact(f"{d}: missing or unreadable manifest ({e})") from None
    for name in ("config.json", "trajectory.npz", "checkpoint.json"):
        if name not in manifest:
            raise CorruptArtifact(f"{d}: manifest does not list {name}")
    for name, digest in manifest.items():
        p = d / name
        if not p.is_file():
            raise CorruptArtifact(f"{d}: missing {name}")
        if _sha256_file(p) != digest:
            raise CorruptArtifact(f"{d}: {name} is truncated or modified (checksum mismatch)")
    flat = {f"{s}.{k}": v for s, sub in json.loads((d / "config.json").read_text()).items()
            for k, v in sub.items()}
    cfg = config_from_flat(flat)
    try:
        with np.load(d / "trajectory.npz", allow_pickle=False) as z:
            arrays = {k: z[k] for k in _TRAJ_ARRAYS + ("alpha0",)}
    except (OSError, ValueError, KeyError, zipfile.BadZipFile) as e:
        raise CorruptArtifact(f"{d}: unreadable trajectory.npz ({e})") from None
    bg = geo.build_background(cfg.geometry)
    if arrays["psi"].ndim != 2 or arrays["psi"].shape != (arrays["t"].size, bg.N):
        raise CorruptArtifact(f"{d}: trajectory arrays do not match the grid")
    expected = cfg.flow.nsteps // cfg.flow.sample_every + 1
    if arrays["t"].size != expected:
        raise CorruptArtifact(f"{d}: {arrays['t'].size} samples, expected {expected} (truncated run)")
    a0 = float(np.asarray(arrays["alpha0"]).reshape(-1)[0])
    traj = fl.Trajectory(bg=bg, flow=cfg.flow, t=arrays["t"], psi=arrays["psi"], t_rec=arrays["t_rec"],
                         m_rec=arrays["m_rec"], g_rec=arrays["g_rec"],
                         alpha0=None if math.isnan(a0) else a0, provenance={"source": str(d)})
    return cfg, traj


def run_config(cfg: RunConfig, provenance: dict | None = None) -> tuple[geo.Background, fl.Trajectory]:
    """Build the background and integrate the configured flow."""
    cfg.validate()
    bg = geo.build_background(cfg.geometry)
    phi0 = initial_potential(bg, cfg)
    prov = {"init": dataclasses.asdict(cfg.init)}
    prov.update(provenance or {})
    return bg, fl.run(bg, cfg.flow, phi0, provenance=prov)
