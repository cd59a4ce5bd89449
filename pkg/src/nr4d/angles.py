"""Sparse-recovery angle estimation over an effective-steering dictionary.

Two solvers share the same projection/residual update:

* :func:`omp_full` correlates the residual against every atom of a fixed
  dictionary each iteration.
* :func:`zoom_omp` first searches a coarse angular grid, then builds a fine
  dictionary only in a window around the coarse pick and selects the atom
  from there.

Both count the normalised correlations they evaluate so the work of the two
strategies can be compared exactly.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .array_geometry import Angle, UpaConfig, effective_steering_matrix
from .range_doppler import RangeDopplerMap, RdPeak, extract_spatial_vector

DEGENERATE_NORM = 1e-12
_TIE_RTOL = 1e-12
_RANK_TOL = 1e-10
# Fine dictionaries kept per zoom plan, keyed by coarse pick (least recently used evicted).
FINE_CACHE_SIZE = 128


class DegenerateDictionaryError(ValueError):
    pass


class IllConditionedSupportError(np.linalg.LinAlgError):
    pass


class ZoomConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AngularGrid:
    """Rectangular (theta, phi) lattice in radians.

    Columns of a dictionary built on this grid run theta-outer, phi-inner.
    """

    theta_values: np.ndarray
    phi_values: np.ndarray
    step: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        for name in ("theta_values", "phi_values"):
            vals = np.asarray(getattr(self, name), dtype=float)
            if vals.ndim != 1 or vals.size == 0:
                raise ValueError(f"{name} must be a non-empty 1-D array")
            if np.any(np.diff(vals) <= 0):
                raise ValueError(f"{name} must be strictly increasing")
            object.__setattr__(self, name, vals)
        if self.theta_values[0] < -np.pi - 1e-12 or self.theta_values[-1] > np.pi + 1e-12:
            raise ValueError("azimuth grid outside [-pi, pi]")
        if self.phi_values[0] < -np.pi / 2 - 1e-12 or self.phi_values[-1] > np.pi / 2 + 1e-12:
            raise ValueError("elevation grid outside [-pi/2, pi/2]")

    @classmethod
    def uniform_deg(
        cls,
        theta_range: tuple[float, float],
        phi_range: tuple[float, float],
        step: float | tuple[float, float],
    ) -> "AngularGrid":
        """Grid from ``start + i * step`` in degrees, ends included when on the lattice."""
        st, sp = (step, step) if np.isscalar(step) else step
        th = _lattice_deg(theta_range[0], theta_range[1], st)
        ph = _lattice_deg(phi_range[0], phi_range[1], sp)
        return cls(np.deg2rad(th), np.deg2rad(ph), (float(np.deg2rad(st)), float(np.deg2rad(sp))))

    @property
    def size(self) -> int:
        return self.theta_values.size * self.phi_values.size

    @property
    def shape(self) -> tuple[int, int]:
        return self.theta_values.size, self.phi_values.size

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened (theta, phi) per column."""
        th, ph = np.meshgrid(self.theta_values, self.phi_values, indexing="ij")
        return th.ravel(), ph.ravel()

    def angle(self, index: int) -> Angle:
        i, j = divmod(int(index), self.phi_values.size)
        return Angle(float(self.theta_values[i]), float(self.phi_values[j]))


def _lattice_deg(lo: float, hi: float, step: float) -> np.ndarray:
    if not step > 0:
        raise ValueError(f"grid step must be > 0, got {step}")
    n = int(np.floor((hi - lo) / step + 1e-9))
    return lo + step * np.arange(n + 1)


@dataclass(frozen=True)
class Dictionary:
    grid: AngularGrid
    atoms: np.ndarray  # (PQ, G)
    norms: np.ndarray  # (G,)

    @property
    def G(self) -> int:
        return self.atoms.shape[1]


@dataclass
class SparseSolution:
    support: list[Angle]
    coefficients: np.ndarray
    residual_norm: float
    correlation_count: int
    residual_norms: list[float] = field(default_factory=list)
    orthogonality: list[float] = field(default_factory=list)
    atoms: np.ndarray | None = None


def build_dictionary(cfg: UpaConfig, w: np.ndarray, grid: AngularGrid) -> Dictionary:
    """Effective steering vectors on every grid point.

    Raises
    ------
    DegenerateDictionaryError
        If a column vanishes, i.e. the precoder has a null toward that direction.
    """
    theta, phi = grid.points()
    atoms = effective_steering_matrix(cfg, w, theta, phi)
    norms = np.linalg.norm(atoms, axis=0)
    bad = np.flatnonzero(norms < DEGENERATE_NORM)
    if bad.size:
        t, p = grid.angle(bad[0]).degrees
        raise DegenerateDictionaryError(
            f"{bad.size} zero-norm atoms (precoder null), first at theta={t:.3f} deg, phi={p:.3f} deg"
        )
    return Dictionary(grid=grid, atoms=atoms, norms=norms)


def _best_atom(atoms: np.ndarray, norms: np.ndarray, r: np.ndarray, exclude=()) -> int:
    score = np.abs(r.conj() @ atoms) / norms
    if len(exclude):
        score[list(exclude)] = -1.0
    # Scores within round-off of the maximum count as ties; the lowest index wins.
    best = score.max()
    return int(np.flatnonzero(score >= best - _TIE_RTOL * best)[0])


class _Projector:
    """Orthogonal projection of ``h`` onto the growing atom set."""

    def __init__(self, h: np.ndarray):
        self.h = h
        self.columns: list[np.ndarray] = []

    def add(self, atom: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        self.columns.append(atom)
        if len(self.columns) == 1:
            # one column: the least-squares fit is a scalar projection
            psi = atom[:, None]
            x = np.array([np.vdot(atom, self.h) / np.vdot(atom, atom).real])
            return psi, x, self.h - atom * x[0]
        psi = np.column_stack(self.columns)
        q, r = np.linalg.qr(psi)
        diag = np.abs(np.diag(r))
        if diag.min() <= _RANK_TOL * max(diag.max(), np.finfo(float).tiny):
            raise IllConditionedSupportError("selected atoms are linearly dependent")
        x = solve_triangular(r, q.conj().T @ self.h)
        resid = self.h - psi @ x
        return psi, x, resid


def _check_target(h: np.ndarray, n_target: int) -> np.ndarray:
    h = np.asarray(h, dtype=complex).ravel()
    if not 1 <= n_target <= h.size:
        raise ValueError(f"n_target must be in 1..{h.size}, got {n_target}")
    return h


def omp_full(h: np.ndarray, dictionary: Dictionary, n_target: int = 1) -> SparseSolution:
    """Classic OMP over all ``G`` atoms for ``n_target`` iterations."""
    h = _check_target(h, n_target)
    if dictionary.atoms.shape[0] != h.size:
        raise ValueError(f"vector length {h.size} does not match dictionary rows {dictionary.atoms.shape[0]}")
    proj = _Projector(h)
    selected: list[int] = []
    resid = h
    x = np.zeros(0, dtype=complex)
    res_norms, ortho = [], []
    for _ in range(n_target):
        idx = _best_atom(dictionary.atoms, dictionary.norms, resid, selected)
        selected.append(idx)
        psi, x, resid = proj.add(dictionary.atoms[:, idx])
        res_norms.append(float(np.linalg.norm(resid)))
        ortho.append(float(np.linalg.norm(psi.conj().T @ resid)))
    return SparseSolution(
        support=[dictionary.grid.angle(i) for i in selected],
        coefficients=x,
        residual_norm=res_norms[-1],
        correlation_count=n_target * dictionary.G,
        residual_norms=res_norms,
        orthogonality=ortho,
        atoms=np.column_stack(proj.columns),
    )


def zoom_window(center: float, halfwidth: float, step: float, lo: float, hi: float) -> np.ndarray:
    """Fine lattice ``center + i * step`` for ``|i * step| <= halfwidth``, clipped to ``[lo, hi]``.

    All arguments are in degrees so lattice points stay exact for binary-friendly steps.
    """
    n = int(np.floor(halfwidth / step + 1e-9))
    vals = center + step * np.arange(-n, n + 1)
    tol = 1e-9 * max(1.0, abs(step))
    return vals[(vals >= lo - tol) & (vals <= hi + tol)]


@dataclass(frozen=True)
class ZoomPlan:
    """Coarse dictionary plus fine-search geometry, shared across calls."""

    coarse: Dictionary
    fine_step_deg: tuple[float, float]
    halfwidth_deg: tuple[float, float]
    _fine_cache: OrderedDict = field(default_factory=OrderedDict, init=False, repr=False, compare=False)

    def fine_dictionary(self, c_idx: int, cfg: UpaConfig, w: np.ndarray) -> Dictionary:
        """Fine dictionary of the window around coarse atom ``c_idx``.

        The window depends only on the coarse pick, so recently used ones are
        cached; this saves atom construction, not correlations.
        """
        key = (c_idx, cfg, w.tobytes())
        hit = self._fine_cache.get(key)
        if hit is not None:
            self._fine_cache.move_to_end(key)
            return hit
        d = build_dictionary(cfg, w, _fine_grid(self, self.coarse.grid.angle(c_idx)))
        self._fine_cache[key] = d
        if len(self._fine_cache) > FINE_CACHE_SIZE:
            self._fine_cache.popitem(last=False)
        return d

    @property
    def bounds_deg(self) -> tuple[float, float, float, float]:
        g = self.coarse.grid
        return (
            float(np.rad2deg(g.theta_values[0])),
            float(np.rad2deg(g.theta_values[-1])),
            float(np.rad2deg(g.phi_values[0])),
            float(np.rad2deg(g.phi_values[-1])),
        )


def make_zoom_plan(
    coarse: AngularGrid | Dictionary,
    fine_step: tuple[float, float],
    zoom_halfwidth: tuple[float, float],
    cfg: UpaConfig | None = None,
    w: np.ndarray | None = None,
) -> ZoomPlan:
    """Validate the zoom geometry; steps and halfwidths in radians."""
    coarse_dict = coarse if isinstance(coarse, Dictionary) else build_dictionary(cfg, w, coarse)
    grid = coarse_dict.grid
    fine_deg = tuple(float(np.rad2deg(s)) for s in fine_step)
    half_deg = tuple(float(np.rad2deg(s)) for s in zoom_halfwidth)
    coarse_deg = []
    for vals, fs, hw, name in zip((grid.theta_values, grid.phi_values), fine_deg, half_deg, ("theta", "phi")):
        c = float(np.rad2deg(np.min(np.diff(vals)))) if vals.size > 1 else np.inf
        coarse_deg.append(c)
        if not 0 < fs < c:
            raise ZoomConfigError(f"fine {name} step {fs} deg must be positive and below the coarse step {c} deg")
        if np.isfinite(c) and 2 * hw < c - 1e-9:
            raise ZoomConfigError(f"zoom window on {name} ({2 * hw} deg) narrower than one coarse step ({c} deg)")
    return ZoomPlan(coarse=coarse_dict, fine_step_deg=fine_deg, halfwidth_deg=half_deg)


def _fine_grid(plan: ZoomPlan, center: Angle) -> AngularGrid:
    t_lo, t_hi, p_lo, p_hi = plan.bounds_deg
    # Snap to undo the rad/deg round trip so windows land on the global fine lattice.
    tc, pc = (round(v, 9) for v in center.degrees)
    th = zoom_window(tc, plan.halfwidth_deg[0], plan.fine_step_deg[0], t_lo, t_hi)
    ph = zoom_window(pc, plan.halfwidth_deg[1], plan.fine_step_deg[1], p_lo, p_hi)
    if th.size == 0 or ph.size == 0:
        raise ZoomConfigError("empty fine window")
    return AngularGrid(
        np.deg2rad(th), np.deg2rad(ph), (float(np.deg2rad(plan.fine_step_deg[0])), float(np.deg2rad(plan.fine_step_deg[1])))
    )


def zoom_omp_plan(h: np.ndarray, plan: ZoomPlan, cfg: UpaConfig, w: np.ndarray, n_target: int = 1) -> SparseSolution:
    """Zoom-OMP with a prebuilt coarse dictionary."""
    h = _check_target(h, n_target)
    coarse = plan.coarse
    if coarse.atoms.shape[0] != h.size:
        raise ValueError(f"vector length {h.size} does not match dictionary rows {coarse.atoms.shape[0]}")
    proj = _Projector(h)
    selected: list[tuple[float, float]] = []
    support: list[Angle] = []
    resid = h
    x = np.zeros(0, dtype=complex)
    count = 0
    res_norms, ortho = [], []
    for _ in range(n_target):
        c_idx = _best_atom(coarse.atoms, coarse.norms, resid)
        count += coarse.G
        fine = plan.fine_dictionary(c_idx, cfg, np.asarray(w, dtype=complex))
        th, ph = fine.grid.points() if selected else (None, None)
        taken = np.zeros(fine.G, dtype=bool)
        for t, p in selected:
            taken |= (np.abs(th - t) < 1e-12) & (np.abs(ph - p) < 1e-12)
        taken = np.flatnonzero(taken)
        f_idx = _best_atom(fine.atoms, fine.norms, resid, taken)
        count += fine.G
        ang = fine.grid.angle(f_idx)
        selected.append((ang.theta_rad, ang.phi_rad))
        support.append(ang)
        psi, x, resid = proj.add(fine.atoms[:, f_idx])
        res_norms.append(float(np.linalg.norm(resid)))
        ortho.append(float(np.linalg.norm(psi.conj().T @ resid)))
    return SparseSolution(
        support=support,
        coefficients=x,
        residual_norm=res_norms[-1],
        correlation_count=count,
        residual_norms=res_norms,
        orthogonality=ortho,
        atoms=np.column_stack(proj.columns),
    )


def zoom_omp(
    h: np.ndarray,
    coarse: AngularGrid,
    fine_step: tuple[float, float],
    zoom_halfwidth: tuple[float, float],
    cfg: UpaConfig,
    w: np.ndarray,
    n_target: int = 1,
) -> SparseSolution:
    """Coarse-to-fine OMP.

    Parameters
    ----------
    h : np.ndarray
        Spatial vector of length ``P*Q``.
    coarse : AngularGrid
        Global low-resolution search grid. Its extent also bounds the fine windows.
    fine_step, zoom_halfwidth : tuple of float
        ``(theta, phi)`` fine lattice step and window half-width, radians.
    cfg, w
        Array geometry and precoder used to build atoms.
    n_target : int
        Number of atoms to recover.
    """
    plan = make_zoom_plan(coarse, fine_step, zoom_halfwidth, cfg, w)
    return zoom_omp_plan(h, plan, cfg, w, n_target)


# ---------------------------------------------------------------------------
# Pipeline glue
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AngleParams:
    theta_range_deg: tuple[float, float] = (-60.0, 60.0)
    phi_range_deg: tuple[float, float] = (-30.0, 30.0)
    coarse_step_deg: float = 5.0
    fine_step_deg: float = 0.5
    zoom_halfwidth_deg: float = 5.0
    n_target: int = 1
    full_grid: str = "coarse"  # grid used by the "full" solver: "coarse" or "fine"

    def coarse_grid(self) -> AngularGrid:
        return AngularGrid.uniform_deg(self.theta_range_deg, self.phi_range_deg, self.coarse_step_deg)

    def fine_grid(self) -> AngularGrid:
        return AngularGrid.uniform_deg(self.theta_range_deg, self.phi_range_deg, self.fine_step_deg)


@dataclass(frozen=True)
class Detection:
    peak: RdPeak
    angle: Angle
    power: float
    amplitude: complex = 0j


class AngleEstimator:
    """Holds prebuilt dictionaries so per-peak estimation is cheap and read-only."""

    def __init__(self, cfg: UpaConfig, w: np.ndarray, params: AngleParams = AngleParams()):
        self.cfg, self.w, self.params = cfg, np.asarray(w, dtype=complex), params
        step = np.deg2rad(params.fine_step_deg)
        half = np.deg2rad(params.zoom_halfwidth_deg)
        self.zoom_plan = make_zoom_plan(params.coarse_grid(), (step, step), (half, half), cfg, self.w)
        self._full: Dictionary | None = None

    @property
    def full_dictionary(self) -> Dictionary:
        if self._full is None:
            if self.params.full_grid == "coarse":
                self._full = self.zoom_plan.coarse
            elif self.params.full_grid == "fine":
                self._full = build_dictionary(self.cfg, self.w, self.params.fine_grid())
            else:
                raise ValueError(f"full_grid must be 'coarse' or 'fine', got {self.params.full_grid!r}")
        return self._full

    def solve(self, h: np.ndarray, method: str) -> SparseSolution:
        if method == "zoom":
            return zoom_omp_plan(h, self.zoom_plan, self.cfg, self.w, self.params.n_target)
        if method == "full":
            return omp_full(h, self.full_dictionary, self.params.n_target)
        raise ValueError(f"unknown solver {method!r}; expected 'zoom' or 'full'")


def estimate_angles(
    rdm: RangeDopplerMap,
    peaks: Sequence[RdPeak],
    method: str,
    estimator: AngleEstimator,
) -> tuple[list[Detection], int]:
    """Run the chosen solver on every peak.

    Returns the detections (one per recovered atom) and the total number of
    correlations evaluated.
    """
    out: list[Detection] = []
    work = 0
    for peak in peaks:
        sol = estimator.solve(extract_spatial_vector(rdm, peak), method)
        work += sol.correlation_count
        for ang, coef in zip(sol.support, sol.coefficients):
            out.append(Detection(peak=peak, angle=ang, power=peak.power, amplitude=complex(coef)))
    return out, work
