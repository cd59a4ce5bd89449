"""End-to-end experiment orchestration.

For every base station the echo of the global scene is synthesised in the
station's local frame, turned into a range-Doppler map, thresholded with
OS-CFAR, and each peak's spatial vector is handed to the angle solver. The
per-station detections are mapped to the global frame, merged, and scored
against the ground-truth scatterer positions.

Seed splitting
--------------
All randomness flows from ``evaluation.seed`` (the master seed) except the
scene geometry, which uses ``scene.seed`` so the ground truth is shared by
all runs. Each stream is a ``numpy.random.SeedSequence(master,
spawn_key=(stream, *counters))``:

* ``(0, bs)``                    transmitted QPSK symbols of station ``bs``
* ``(1, bs, snr_index, trial)``  receiver noise

The first 64-bit word of the sequence state is used as the integer seed.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .angles import AngleEstimator, Detection, estimate_angles
from .cloud_io import fmt, write_csv, write_ply
from .config import ScenarioConfig
from .fusion import BsPose, PointCloud4D, fuse, local_cloud
from .metrics import MetricReport, precision_recall_f
from .nr_grid import fill_grid
from .range_doppler import compute_rdm, dump_rdm, estimate_channel, oscfar_detect
from .scene import add_noise, noiseless_echo, scene_from_points

log = logging.getLogger(__name__)

STREAM_SYMBOLS = 0
STREAM_NOISE = 1

# Above these sizes the pipeline avoids caching clean echoes / per-antenna maps.
_ECHO_CACHE_BYTES = 1 << 30
_PER_ANTENNA_RDM_BYTES = 1 << 29


class PipelineError(RuntimeError):
    """Failure inside one pipeline stage; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


def derive_seed(master: int, stream: int, *counters: int) -> int:
    ss = np.random.SeedSequence(int(master), spawn_key=(int(stream), *map(int, counters)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GlobalScene:
    positions: np.ndarray  # (N, 3)
    velocities: np.ndarray  # (N, 3)
    gains: np.ndarray  # (N,) complex
    hidden_from: tuple[frozenset, ...]  # station ids that cannot see each scatterer

    def __len__(self) -> int:
        return len(self.positions)

    def cloud(self) -> PointCloud4D:
        """Ground truth as a cloud; velocity holds the speed, bs_id is -1."""
        return PointCloud4D(
            self.positions,
            np.linalg.norm(self.velocities, axis=1) if len(self) else np.zeros(0),
            np.abs(self.gains) ** 2,
            np.full(len(self), -1, dtype=int),
        )


def _random_block(spec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    pts: list[np.ndarray] = []
    attempts = 0
    while len(pts) < spec.count:
        attempts += 1
        if attempts > 1000 * max(spec.count, 1):
            raise ValueError(f"could not place {spec.count} scatterers {spec.min_separation} m apart")
        ang = rng.uniform(0.0, 2 * np.pi)
        rad = spec.radius * np.sqrt(rng.uniform())
        p = np.array(
            [spec.center[0] + rad * np.cos(ang), spec.center[1] + rad * np.sin(ang), rng.uniform(*spec.z_range)]
        )
        if spec.min_separation > 0 and pts and np.min(np.linalg.norm(np.array(pts) - p, axis=1)) < spec.min_separation:
            continue
        pts.append(p)
    n = spec.count
    heading = rng.uniform(0.0, 2 * np.pi, n)
    speed = rng.uniform(0.0, spec.speed_max, n)
    vel = np.column_stack([speed * np.cos(heading), speed * np.sin(heading), np.zeros(n)])
    return np.array(pts).reshape(n, 3), vel


def build_global_scene(cfg: ScenarioConfig) -> GlobalScene:
    """Explicit scatterers, then primitive samples, then the random block.

    Gains not given explicitly have a random phase and unit magnitude (the
    random block draws its magnitudes from ``gain_db``).
    """
    sc = cfg.scene
    rng = np.random.default_rng(sc.seed)
    pos, vel, gain, hidden = [], [], [], []
    for s in sc.scatterers:
        pos.append(s.position)
        vel.append(s.velocity)
        gain.append(s.gain if s.gain is not None else np.exp(1j * rng.uniform(0, 2 * np.pi)))
        hidden.append(frozenset(s.hidden_from))
    for prim in sc.primitives:
        shape = prim.shape()
        faces = shape.faces() if hasattr(shape, "faces") else [shape]
        for face in faces:
            n = int(round(face.area * sc.density))
            if n:
                pts = face.sample(n, rng)
                pos.extend(pts)
                vel.extend([prim.velocity] * n)
                gain.extend(np.exp(1j * rng.uniform(0, 2 * np.pi, n)))
                hidden.extend([frozenset()] * n)
    if sc.random is not None and sc.random.count:
        p, v = _random_block(sc.random, rng)
        pos.extend(p)
        vel.extend(v)
        mag = 10.0 ** (rng.uniform(*sc.random.gain_db, len(p)) / 20.0)
        gain.extend(mag * np.exp(1j * rng.uniform(0, 2 * np.pi, len(p))))
        hidden.extend([frozenset()] * len(p))
    n = len(pos)
    return GlobalScene(
        positions=np.asarray(pos, dtype=float).reshape(n, 3),
        velocities=np.asarray(vel, dtype=float).reshape(n, 3),
        gains=np.asarray(gain, dtype=complex).reshape(n),
        hidden_from=tuple(hidden),
    )


def station_poses(cfg: ScenarioConfig) -> list[BsPose]:
    return [BsPose.from_ypr(*s.ypr_deg, s.position, s.bs_id) for s in cfg.stations]


def local_scene(scene: GlobalScene, pose: BsPose):
    """The part of ``scene`` visible to ``pose``, in its local frame.

    Radial velocity is positive for scatterers moving towards the station.
    """
    keep = np.array([pose.bs_id not in h for h in scene.hidden_from], dtype=bool)
    loc = pose.to_local(scene.positions[keep])
    v_loc = scene.velocities[keep] @ pose.rotation
    r = np.linalg.norm(loc, axis=1)
    u = loc / np.where(r > 0, r, 1.0)[:, None]
    radial = -(v_loc * u).sum(axis=1)
    return scene_from_points(loc, radial, scene.gains[keep])


# ---------------------------------------------------------------------------
# Run
# ---------------------------------------------------------------------------


@dataclass
class TrialResult:
    solver: str
    snr_db: float
    trial: int
    local_clouds: dict[int, PointCloud4D]
    fused: PointCloud4D
    report: MetricReport | None
    correlation_count: int
    n_peaks: int
    warning: str = ""


@dataclass
class RunArtifacts:
    config: ScenarioConfig
    config_hash: str
    ground_truth: GlobalScene
    results: list[TrialResult] = field(default_factory=list)
    rdm_files: list[Path] = field(default_factory=list)

    def rows(self, solver: str) -> list[TrialResult]:
        return [r for r in self.results if r.solver == solver]

    def correlation_summary(self) -> dict[str, dict[str, float]]:
        """Total correlations and per-peak average for every solver."""
        out = {}
        for solver in self.config.evaluation.solvers:
            rows = self.rows(solver)
            total = sum(r.correlation_count for r in rows)
            peaks = sum(r.n_peaks for r in rows)
            out[solver] = {"total": total, "peaks": peaks, "per_peak": total / peaks if peaks else 0.0}
        return out

    def summary(self) -> list[dict]:
        """Mean and standard error of Chamfer distance and F-score per (solver, SNR)."""
        table = []
        for solver in self.config.evaluation.solvers:
            for snr in self.config.evaluation.snr_db:
                reps = [r.report for r in self.rows(solver) if r.snr_db == snr]
                cd = np.array([r.chamfer_m if r else np.nan for r in reps])
                fs = np.array([r.f_score if r else 0.0 for r in reps])
                table.append(
                    {
                        "solver": solver,
                        "snr_db": snr,
                        "trials": len(reps),
                        "mean_chamfer_m": _mean(cd),
                        "se_chamfer_m": _se(cd),
                        "mean_f_score": _mean(fs),
                        "se_f_score": _se(fs),
                    }
                )
        return table


def _mean(x: np.ndarray) -> float:
    x = x[np.isfinite(x)]
    return float(x.mean()) if len(x) else math.nan


def _se(x: np.ndarray) -> float:
    x = x[np.isfinite(x)]
    return float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0


def _stage(name: str):
    class _Guard:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, PipelineError):
                raise PipelineError(name, f"{type(exc).__name__}: {exc}") from exc
            return False

    return _Guard()


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path | None = None, dump_rdms: bool = False) -> RunArtifacts:
    """Run every (SNR, trial, solver) combination and optionally write the outputs.

    With ``dump_rdms`` the integrated map of trial 0 is written per
    (station, SNR).
    """
    ev = cfg.evaluation
    proc = cfg.processing
    with _stage("config"):
        dims = cfg.dims()
        upa = cfg.array.upa()
        w = cfg.array.precoder_vector()
        n_r, n_d = cfg.padding()
        radius = cfg.match_radius()
    with _stage("scene"):
        gt = build_global_scene(cfg)
        poses = station_poses(cfg)
        scenes = {p.bs_id: local_scene(gt, p) for p in poses}
    with _stage("angles"):
        estimator = AngleEstimator(upa, w, proc.angles)

    artifacts = RunArtifacts(cfg, cfg.config_hash(), gt)
    if out_dir is not None:
        out_dir = Path(out_dir)
        with _stage("output"):
            out_dir.mkdir(parents=True, exist_ok=True)

    echo_bytes = upa.n_elements * dims.K * dims.L * 16
    cache_echo = echo_bytes * len(poses) <= _ECHO_CACHE_BYTES
    keep_per_antenna = upa.n_elements * n_r * n_d * 16 <= _PER_ANTENNA_RDM_BYTES
    grids, clean = {}, {}

    def echo(pose):
        bs = pose.bs_id
        if bs not in grids:
            grids[bs] = fill_grid(dims, derive_seed(ev.seed, STREAM_SYMBOLS, bs))
        if bs in clean:
            return clean[bs]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            y = noiseless_echo(grids[bs], upa, w, scenes[bs])
        if cache_echo:
            clean[bs] = y
        return y

    for si, snr in enumerate(ev.snr_db):
        for trial in range(ev.trials):
            per_solver: dict[str, list[tuple[BsPose, list[Detection]]]] = {s: [] for s in ev.solvers}
            work = {s: 0 for s in ev.solvers}
            n_peaks = 0
            for pose in poses:
                bs = pose.bs_id
                with _stage("synthesize"):
                    rx = add_noise(echo(pose), upa, snr, derive_seed(ev.seed, STREAM_NOISE, bs, si, trial))
                with _stage("rdm"):
                    rdm = compute_rdm(estimate_channel(rx, grids[bs]), n_r, n_d, keep_per_antenna)
                    del rx
                    if dump_rdms and out_dir is not None and trial == 0:
                        path = out_dir / f"rdm_bs{bs}_snr{snr:g}.bin"
                        dump_rdm(rdm, path)
                        artifacts.rdm_files.append(path)
                with _stage("cfar"):
                    peaks = oscfar_detect(rdm, proc.cfar, dims)
                n_peaks += len(peaks)
                for solver in ev.solvers:
                    with _stage("angles"):
                        dets, count = estimate_angles(rdm, peaks, solver, estimator)
                    per_solver[solver].append((pose, dets))
                    work[solver] += count
                del rdm
            for solver in ev.solvers:
                with _stage("fusion"):
                    fused = fuse(per_solver[solver])
                    locals_ = {p.bs_id: local_cloud(d, p.bs_id) for p, d in per_solver[solver]}
                with _stage("metrics"):
                    report, warning = None, ""
                    if len(fused) == 0:
                        warning = "empty predicted cloud"
                    elif len(gt) == 0:
                        warning = "empty ground-truth cloud"
                    else:
                        report = precision_recall_f(gt.positions, fused.positions, radius)
                    if warning:
                        log.warning("%s snr=%g trial=%d: %s", solver, snr, trial, warning)
                artifacts.results.append(
                    TrialResult(solver, snr, trial, locals_, fused, report, work[solver], n_peaks, warning)
                )
            log.info("snr=%g trial=%d peaks=%d", snr, trial, n_peaks)

    if out_dir is not None:
        with _stage("output"):
            emit_outputs(artifacts, out_dir)
    return artifacts


# ---------------------------------------------------------------------------
# Outputs
# ---------------------------------------------------------------------------


def _tag(r: TrialResult) -> str:
    return f"{r.solver}_snr{r.snr_db:g}_t{r.trial}"


def _num(x: float) -> str:
    return "nan" if x is None or not math.isfinite(x) else fmt(x)


METRIC_COLUMNS = (
    "solver",
    "snr_db",
    "trial",
    "chamfer_m",
    "precision",
    "recall",
    "f_score",
    "match_radius_m",
    "correlation_count",
    "n_points",
    "warning",
)
SUMMARY_COLUMNS = ("solver", "snr_db", "trials", "mean_chamfer_m", "se_chamfer_m", "mean_f_score", "se_f_score")


def _metric_record(r: TrialResult, radius: float) -> dict:
    rep = r.report
    return {
        "solver": r.solver,
        "snr_db": r.snr_db,
        "trial": r.trial,
        "chamfer_m": rep.chamfer_m if rep else math.nan,
        "precision": rep.precision if rep else 0.0,
        "recall": rep.recall if rep else 0.0,
        "f_score": rep.f_score if rep else 0.0,
        "match_radius_m": radius,
        "correlation_count": r.correlation_count,
        "n_points": len(r.fused),
        "warning": r.warning,
    }


def _csv_value(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return _num(float(v))


def emit_outputs(artifacts: RunArtifacts, out_dir: str | Path) -> list[Path]:
    """Write clouds, per-trial metrics and the SNR summary; returns the written paths.

    Files (``<tag>`` is ``<solver>_snr<snr>_t<trial>``):

    * ``config.json``              resolved configuration and its hash
    * ``ground_truth.{ply,csv}``   scatterer positions
    * ``fused_<tag>.{ply,csv}``    fused global cloud
    * ``local_<tag>.csv``          per-station clouds in their local frames
    * ``metrics.json`` / ``metrics.csv``  one record per (solver, snr_db, trial)
    * ``summary.csv``              mean / standard error of CD and F-score vs SNR
    """
    out = Path(out_dir)
    h = artifacts.config_hash
    written: list[Path] = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        p = out / "config.json"
        p.write_text(json.dumps({"config_hash": h, "config": artifacts.config.to_dict()}, indent=2, sort_keys=True) + "\n")
        written.append(p)

        gt = artifacts.ground_truth.cloud()
        for ext, writer in (("ply", write_ply), ("csv", write_csv)):
            p = out / f"ground_truth.{ext}"
            writer(gt, p, h)
            written.append(p)

        for r in artifacts.results:
            tag = _tag(r)
            for ext, writer in (("ply", write_ply), ("csv", write_csv)):
                p = out / f"fused_{tag}.{ext}"
                writer(r.fused, p, h)
                written.append(p)
            p = out / f"local_{tag}.csv"
            write_csv(PointCloud4D.concat([r.local_clouds[k] for k in sorted(r.local_clouds)]), p, h)
            written.append(p)

        radius = artifacts.config.match_radius()
        records = [_metric_record(r, radius) for r in artifacts.results]
        p = out / "metrics.json"
        doc = {
            "config_hash": h,
            "correlation_summary": artifacts.correlation_summary(),
            "records": [{k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in rec.items()} for rec in records],
            "warnings": sorted({f"{_tag(r)}: {r.warning}" for r in artifacts.results if r.warning}),
        }
        p.write_text(json.dumps(doc, indent=2) + "\n")
        written.append(p)

        p = out / "metrics.csv"
        lines = [f"# config_hash={h}", ",".join(METRIC_COLUMNS)]
        lines += [",".join(_csv_value(rec[c]) for c in METRIC_COLUMNS) for rec in records]
        p.write_text("\n".join(lines) + "\n")
        written.append(p)

        p = out / "summary.csv"
        lines = [f"# config_hash={h}", ",".join(SUMMARY_COLUMNS)]
        lines += [",".join(_csv_value(row[c]) for c in SUMMARY_COLUMNS) for row in artifacts.summary()]
        p.write_text("\n".join(lines) + "\n")
        written.append(p)
    except OSError as exc:
        raise PipelineError("output", f"cannot write {exc.filename or out}: {exc.strerror or exc}") from exc
    return written
