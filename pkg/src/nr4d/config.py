"""Scenario configuration: YAML files layered over a named profile.

Resolution order (later wins): dataclass defaults, the bundled profile
(``table1`` unless the file or caller names another), the file itself.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .angles import AngleParams
from .array_geometry import Angle, UpaConfig, matched_precoder, single_element_precoder
from .nr_grid import GridDims, make_grid_dims, make_numerology
from .range_doppler import CfarConfig, default_padding
from .scene import Box, Rectangle

PROFILES = ("table1", "desk")


class ConfigError(ValueError):
    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


@dataclass(frozen=True)
class GridSpec:
    mu: int = 3
    n_rb: int = 264
    n_subframes: int = 2
    carrier_hz: float = 26e9
    cp_mode: str = "normal"

    def dims(self) -> GridDims:
        return make_grid_dims(make_numerology(self.mu, self.cp_mode), self.n_rb, self.n_subframes, self.carrier_hz)


@dataclass(frozen=True)
class ArraySpec:
    P: int = 8
    Q: int = 8
    d_over_lambda: float = 0.5
    precoder: str = "single_element"  # or "matched"
    boresight_deg: tuple[float, float] = (0.0, 0.0)

    def upa(self) -> UpaConfig:
        return UpaConfig(self.P, self.Q, self.d_over_lambda)

    def precoder_vector(self) -> np.ndarray:
        cfg = self.upa()
        if self.precoder == "matched":
            return matched_precoder(cfg, Angle.from_degrees(*self.boresight_deg))
        return single_element_precoder(cfg)


@dataclass(frozen=True)
class ScattererSpec:
    position: tuple[float, float, float]
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gain: complex | None = None
    hidden_from: tuple[int, ...] = ()


@dataclass(frozen=True)
class RandomSceneSpec:
    """Scatterers drawn uniformly in a horizontal disc with random horizontal velocities."""

    count: int = 20
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 25.0
    z_range: tuple[float, float] = (0.0, 2.0)
    speed_max: float = 25.0
    min_separation: float = 0.0
    gain_db: tuple[float, float] = (0.0, 0.0)  # magnitudes uniform in dB over [lo, hi]; phases random


@dataclass(frozen=True)
class PrimitiveSpec:
    kind: str  # "rectangle" or "box"
    center: tuple[float, float, float]
    size: tuple[float, ...]
    ypr_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def shape(self) -> Rectangle | Box:
        if self.kind == "box":
            return Box(self.center, self.size)
        return Rectangle(self.center, self.size, self.ypr_deg)


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 7
    scatterers: tuple[ScattererSpec, ...] = ()
    primitives: tuple[PrimitiveSpec, ...] = ()
    density: float = 1.0
    random: RandomSceneSpec | None = None


@dataclass(frozen=True)
class StationSpec:
    bs_id: int
    position: tuple[float, float, float]
    ypr_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ProcessingSpec:
    n_r: int | None = None
    n_d: int | None = None
    cfar: CfarConfig = field(default_factory=CfarConfig)
    angles: AngleParams = field(default_factory=AngleParams)


@dataclass(frozen=True)
class EvaluationSpec:
    snr_db: tuple[float, ...] = (10.0,)
    trials: int = 1
    seed: int = 0
    match_radius_m: float | None = None
    solvers: tuple[str, ...] = ("zoom", "full")


@dataclass(frozen=True)
class ScenarioConfig:
    profile: str
    grid: GridSpec
    array: ArraySpec
    scene: SceneSpec
    stations: tuple[StationSpec, ...]
    processing: ProcessingSpec
    evaluation: EvaluationSpec

    def dims(self) -> GridDims:
        return self.grid.dims()

    def padding(self) -> tuple[int, int]:
        d_r, d_d = default_padding(self.dims())
        return self.processing.n_r or d_r, self.processing.n_d or d_d

    def match_radius(self) -> float:
        if self.evaluation.match_radius_m is not None:
            return self.evaluation.match_radius_m
        return self.dims().range_bin_m(self.padding()[0])

    def to_dict(self) -> dict:
        """Plain data in the file schema, so ``from_dict(cfg.to_dict())`` rebuilds ``cfg``."""
        d = _jsonable(asdict(self))
        for s in d["stations"]:
            s["id"] = s.pop("bs_id")
        for p in d["scene"]["primitives"]:
            p["type"] = p.pop("kind")
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def profile_path(name: str) -> Path:
    if name not in PROFILES:
        raise ConfigError("profile", f"unknown profile {name!r}; expected one of {PROFILES}")
    return Path(str(resources.files("nr4d") / "configs" / f"{name}.cfg"))


def _read_yaml(path: Path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"parse error: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(str(path), "top level must be a mapping")
    return data


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | Path | None = None, profile: str | None = None, overrides: dict | None = None) -> ScenarioConfig:
    """Load, layer and validate a scenario.

    Raises
    ------
    ConfigError
        On parse errors or invalid values; the message names the offending field.
    """
    data = _read_yaml(Path(path)) if path is not None else {}
    name = profile or data.get("profile") or "table1"
    base = _read_yaml(profile_path(name))
    if base.get("profile", name) != name:
        raise ConfigError("profile", f"bundled profile file {name} declares {base.get('profile')!r}")
    merged = _merge(base, data)
    if overrides:
        merged = _merge(merged, overrides)
    merged["profile"] = name
    return from_dict(merged)


def _section(data: dict, key: str) -> dict:
    val = data.get(key) or {}
    if not isinstance(val, dict):
        raise ConfigError(key, "must be a mapping")
    return val


def _check_keys(d: dict, allowed, where: str) -> None:
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(where, f"unknown field(s) {sorted(extra)}")


def _vec(val, n: int, where: str) -> tuple[float, ...]:
    try:
        out = tuple(float(v) for v in val)
    except (TypeError, ValueError):
        raise ConfigError(where, f"expected a list of {n} numbers, got {val!r}") from None
    if len(out) != n:
        raise ConfigError(where, f"expected {n} numbers, got {len(out)}")
    return out


def _int(val, where: str, minimum: int | None = None) -> int:
    if isinstance(val, bool) or not isinstance(val, (int, np.integer)):
        raise ConfigError(where, f"expected an integer, got {val!r}")
    if minimum is not None and val < minimum:
        raise ConfigError(where, f"must be >= {minimum}, got {val}")
    return int(val)


def _pos(val, where: str) -> float:
    try:
        v = float(val)
    except (TypeError, ValueError):
        raise ConfigError(where, f"expected a number, got {val!r}") from None
    if not v > 0:
        raise ConfigError(where, f"must be > 0, got {val}")
    return v


def _build(where: str, fn, *args, **kwargs):
    """Run a constructor, re-raising its validation errors with a field path."""
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(where, str(exc)) from exc


def _grid(d: dict) -> GridSpec:
    _check_keys(d, GridSpec.__dataclass_fields__, "grid")
    g = GridSpec()
    spec = GridSpec(
        mu=_int(d.get("mu", g.mu), "grid.mu", 0),
        n_rb=_int(d.get("n_rb", g.n_rb), "grid.n_rb", 1),
        n_subframes=_int(d.get("n_subframes", g.n_subframes), "grid.n_subframes", 1),
        carrier_hz=_pos(d.get("carrier_hz", g.carrier_hz), "grid.carrier_hz"),
        cp_mode=str(d.get("cp_mode", g.cp_mode)),
    )
    _build("grid", spec.dims)
    return spec


def _array(d: dict) -> ArraySpec:
    _check_keys(d, ArraySpec.__dataclass_fields__, "array")
    a = ArraySpec()
    precoder = d.get("precoder", a.precoder)
    if precoder not in ("single_element", "matched"):
        raise ConfigError("array.precoder", f"expected 'single_element' or 'matched', got {precoder!r}")
    spec = ArraySpec(
        P=_int(d.get("P", a.P), "array.P", 1),
        Q=_int(d.get("Q", a.Q), "array.Q", 1),
        d_over_lambda=_pos(d.get("d_over_lambda", a.d_over_lambda), "array.d_over_lambda"),
        precoder=precoder,
        boresight_deg=_vec(d.get("boresight_deg", a.boresight_deg), 2, "array.boresight_deg"),
    )
    _build("array.boresight_deg", Angle.from_degrees, *spec.boresight_deg)
    return spec


def _gain(val, where: str) -> complex | None:
    if val is None:
        return None
    if isinstance(val, (int, float)):
        return complex(val)
    re, im = _vec(val, 2, where)
    return complex(re, im)


def _gain_range(val) -> tuple[float, float]:
    if isinstance(val, (int, float)):
        return (float(val), float(val))
    lo, hi = _vec(val, 2, "scene.random.gain_db")
    if lo > hi:
        raise ConfigError("scene.random.gain_db", f"lower bound {lo} exceeds upper bound {hi}")
    return (lo, hi)


def _scene(d: dict) -> SceneSpec:
    _check_keys(d, SceneSpec.__dataclass_fields__, "scene")
    scats = []
    for i, s in enumerate(d.get("scatterers") or []):
        w = f"scene.scatterers[{i}]"
        if not isinstance(s, dict):
            raise ConfigError(w, "must be a mapping")
        _check_keys(s, ScattererSpec.__dataclass_fields__, w)
        if "position" not in s:
            raise ConfigError(f"{w}.position", "required")
        scats.append(
            ScattererSpec(
                position=_vec(s["position"], 3, f"{w}.position"),
                velocity=_vec(s.get("velocity", (0, 0, 0)), 3, f"{w}.velocity"),
                gain=_gain(s.get("gain"), f"{w}.gain"),
                hidden_from=tuple(_int(b, f"{w}.hidden_from", 0) for b in s.get("hidden_from") or ()),
            )
        )
    prims = []
    for i, p in enumerate(d.get("primitives") or []):
        w = f"scene.primitives[{i}]"
        if not isinstance(p, dict):
            raise ConfigError(w, "must be a mapping")
        kind = p.get("type", "rectangle")
        if kind not in ("rectangle", "box"):
            raise ConfigError(f"{w}.type", f"expected 'rectangle' or 'box', got {kind!r}")
        _check_keys(p, ("type", "center", "size", "ypr_deg", "velocity"), w)
        size = _vec(p.get("size"), 3 if kind == "box" else 2, f"{w}.size")
        if min(size) <= 0:
            raise ConfigError(f"{w}.size", "sizes must be > 0")
        prims.append(
            PrimitiveSpec(
                kind=kind,
                center=_vec(p.get("center"), 3, f"{w}.center"),
                size=size,
                ypr_deg=_vec(p.get("ypr_deg", (0, 0, 0)), 3, f"{w}.ypr_deg"),
                velocity=_vec(p.get("velocity", (0, 0, 0)), 3, f"{w}.velocity"),
            )
        )
    rnd = None
    if d.get("random") is not None:
        r = d["random"]
        if not isinstance(r, dict):
            raise ConfigError("scene.random", "must be a mapping")
        _check_keys(r, RandomSceneSpec.__dataclass_fields__, "scene.random")
        dflt = RandomSceneSpec()
        rnd = RandomSceneSpec(
            count=_int(r.get("count", dflt.count), "scene.random.count", 0),
            center=_vec(r.get("center", dflt.center), 2, "scene.random.center"),
            radius=_pos(r.get("radius", dflt.radius), "scene.random.radius"),
            z_range=_vec(r.get("z_range", dflt.z_range), 2, "scene.random.z_range"),
            speed_max=float(r.get("speed_max", dflt.speed_max)),
            min_separation=float(r.get("min_separation", dflt.min_separation)),
            gain_db=_gain_range(r.get("gain_db", dflt.gain_db)),
        )
    return SceneSpec(
        seed=_int(d.get("seed", SceneSpec.seed), "scene.seed", 0),
        scatterers=tuple(scats),
        primitives=tuple(prims),
        density=_pos(d.get("density", SceneSpec.density), "scene.density"),
        random=rnd,
    )


def _stations(items) -> tuple[StationSpec, ...]:
    if not isinstance(items, list) or not items:
        raise ConfigError("stations", "at least one base station is required")
    out = []
    for i, s in enumerate(items):
        w = f"stations[{i}]"
        if not isinstance(s, dict):
            raise ConfigError(w, "must be a mapping")
        _check_keys(s, ("id", "position", "ypr_deg"), w)
        out.append(
            StationSpec(
                bs_id=_int(s.get("id", i), f"{w}.id", 0),
                position=_vec(s.get("position"), 3, f"{w}.position"),
                ypr_deg=_vec(s.get("ypr_deg", (0, 0, 0)), 3, f"{w}.ypr_deg"),
            )
        )
    ids = [s.bs_id for s in out]
    if len(set(ids)) != len(ids):
        raise ConfigError("stations", f"duplicate station ids {ids}")
    return tuple(out)


def _pair(val, where: str) -> tuple[int, int]:
    if isinstance(val, int):
        return (val, val)
    v = _vec(val, 2, where)
    return (int(v[0]), int(v[1]))


def _processing(d: dict) -> ProcessingSpec:
    _check_keys(d, ProcessingSpec.__dataclass_fields__, "processing")
    c = _section(d, "cfar")
    _check_keys(c, CfarConfig.__dataclass_fields__, "processing.cfar")
    dc = CfarConfig()
    cfar = _build(
        "processing.cfar",
        CfarConfig,
        guard_cells=_pair(c.get("guard_cells", dc.guard_cells), "processing.cfar.guard_cells"),
        training_cells=_pair(c.get("training_cells", dc.training_cells), "processing.cfar.training_cells"),
        os_rank_fraction=float(c.get("os_rank_fraction", dc.os_rank_fraction)),
        pfa=float(c.get("pfa", dc.pfa)),
        scale_factor=None if c.get("scale_factor") is None else float(c["scale_factor"]),
        min_peak_separation=_int(c.get("min_peak_separation", dc.min_peak_separation), "processing.cfar.min_peak_separation", 1),
        dynamic_range_db=None if c.get("dynamic_range_db") is None else float(c["dynamic_range_db"]),
    )
    a = _section(d, "angles")
    _check_keys(a, AngleParams.__dataclass_fields__, "processing.angles")
    da = AngleParams()
    full_grid = a.get("full_grid", da.full_grid)
    if full_grid not in ("coarse", "fine"):
        raise ConfigError("processing.angles.full_grid", f"expected 'coarse' or 'fine', got {full_grid!r}")
    angles = AngleParams(
        theta_range_deg=_vec(a.get("theta_range_deg", da.theta_range_deg), 2, "processing.angles.theta_range_deg"),
        phi_range_deg=_vec(a.get("phi_range_deg", da.phi_range_deg), 2, "processing.angles.phi_range_deg"),
        coarse_step_deg=_pos(a.get("coarse_step_deg", da.coarse_step_deg), "processing.angles.coarse_step_deg"),
        fine_step_deg=_pos(a.get("fine_step_deg", da.fine_step_deg), "processing.angles.fine_step_deg"),
        zoom_halfwidth_deg=_pos(a.get("zoom_halfwidth_deg", da.zoom_halfwidth_deg), "processing.angles.zoom_halfwidth_deg"),
        n_target=_int(a.get("n_target", da.n_target), "processing.angles.n_target", 1),
        full_grid=full_grid,
    )
    _build("processing.angles", angles.coarse_grid)
    n_r, n_d = d.get("n_r"), d.get("n_d")
    return ProcessingSpec(
        n_r=None if n_r is None else _int(n_r, "processing.n_r", 1),
        n_d=None if n_d is None else _int(n_d, "processing.n_d", 1),
        cfar=cfar,
        angles=angles,
    )


def _evaluation(d: dict) -> EvaluationSpec:
    _check_keys(d, EvaluationSpec.__dataclass_fields__, "evaluation")
    e = EvaluationSpec()
    snr = d.get("snr_db", e.snr_db)
    snr = (snr,) if isinstance(snr, (int, float)) else snr
    try:
        snr = tuple(float(s) for s in snr)
    except (TypeError, ValueError):
        raise ConfigError("evaluation.snr_db", f"expected numbers, got {snr!r}") from None
    if not snr:
        raise ConfigError("evaluation.snr_db", "at least one SNR is required")
    solvers = tuple(d.get("solvers", e.solvers))
    for s in solvers:
        if s not in ("zoom", "full"):
            raise ConfigError("evaluation.solvers", f"unknown solver {s!r}")
    radius = d.get("match_radius_m")
    return EvaluationSpec(
        snr_db=snr,
        trials=_int(d.get("trials", e.trials), "evaluation.trials", 1),
        seed=_int(d.get("seed", e.seed), "evaluation.seed", 0),
        match_radius_m=None if radius is None else _pos(radius, "evaluation.match_radius_m"),
        solvers=solvers,
    )


def from_dict(data: dict) -> ScenarioConfig:
    _check_keys(data, ScenarioConfig.__dataclass_fields__, "<root>")
    cfg = ScenarioConfig(
        profile=str(data.get("profile", "table1")),
        grid=_grid(_section(data, "grid")),
        array=_array(_section(data, "array")),
        scene=_scene(_section(data, "scene")),
        stations=_stations(data.get("stations")),
        processing=_processing(_section(data, "processing")),
        evaluation=_evaluation(_section(data, "evaluation")),
    )
    n_r, n_d = cfg.padding()
    dims = cfg.dims()
    if n_r < dims.K:
        raise ConfigError("processing.n_r", f"must be >= K={dims.K}, got {n_r}")
    if n_d < dims.L:
        raise ConfigError("processing.n_d", f"must be >= L={dims.L}, got {n_d}")
    hidden = {b for s in cfg.scene.scatterers for b in s.hidden_from}
    unknown = hidden - {s.bs_id for s in cfg.stations}
    if unknown:
        raise ConfigError("scene.scatterers.hidden_from", f"unknown station ids {sorted(unknown)}")
    return cfg
