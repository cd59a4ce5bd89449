"""Scatterer scenes and frequency-domain echo synthesis.

The received grid at antenna ``pq`` is

    Y[pq, k, l] = sum_i alpha_i * a_Rx_i[pq] * (a_Tx_i^H w) * s[k, l]
                  * exp(-j 2 pi k df tau_i) * exp(+j 2 pi f_D,i l T_s) + n[pq, k, l]

with ``tau_i = 2 R_i / c`` and ``f_D,i = 2 v_i / lambda``; positive ``v``
means the scatterer approaches the array.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .array_geometry import (
    Angle,
    UpaConfig,
    angle_to_unit_vector,
    cartesian_to_spherical,
    effective_steering_matrix,
)
from .nr_grid import SPEED_OF_LIGHT, ResourceGrid


@dataclass(frozen=True)
class Scatterer:
    range_m: float
    angle: Angle
    radial_velocity_mps: float = 0.0
    gain: complex = 1.0 + 0.0j

    def __post_init__(self):
        if self.range_m < 0:
            raise ValueError(f"range must be >= 0, got {self.range_m}")


@dataclass(frozen=True)
class ScatterScene:
    scatterers: tuple[Scatterer, ...] = ()
    frame: str = "bs-local"

    def __len__(self) -> int:
        return len(self.scatterers)

    def positions(self) -> np.ndarray:
        """Cartesian positions in the scene's frame, shape (N, 3)."""
        if not self.scatterers:
            return np.zeros((0, 3))
        return np.array([s.range_m * angle_to_unit_vector(s.angle) for s in self.scatterers])


@dataclass(frozen=True)
class ReceivedGrid:
    per_antenna: np.ndarray  # (PQ, K, L) complex
    snr_db: float
    noise_seed: int | None = None


def noise_variance(cfg: UpaConfig, snr_db: float) -> float:
    """Per-RE, per-antenna noise power.

    SNR is referenced to a unit-gain scatterer seen through a matched beam,
    whose per-antenna echo power is ``P*Q`` for unit-power symbols.
    """
    if np.isinf(snr_db) and snr_db > 0:
        return 0.0
    return cfg.n_elements / 10.0 ** (snr_db / 10.0)


def scene_from_points(
    points: np.ndarray,
    radial_velocities: Sequence[float] | None = None,
    gains: Sequence[complex] | None = None,
) -> ScatterScene:
    """Build a scene from BS-local Cartesian positions."""
    points = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 3)
    n = len(points)
    vel = np.zeros(n) if radial_velocities is None else np.asarray(radial_velocities, dtype=float)
    g = np.ones(n, dtype=complex) if gains is None else np.asarray(gains, dtype=complex)
    rng_m, theta, phi = cartesian_to_spherical(points) if n else ([], [], [])
    return ScatterScene(
        tuple(
            Scatterer(float(rng_m[i]), Angle(float(theta[i]), float(phi[i])), float(vel[i]), complex(g[i]))
            for i in range(n)
        )
    )


def synthesize_echo(
    grid: ResourceGrid,
    cfg: UpaConfig,
    w: np.ndarray,
    scene: ScatterScene,
    snr_db: float,
    seed: int | None = None,
) -> ReceivedGrid:
    """Simulate the noisy echo received on every antenna.

    ``snr_db = inf`` disables noise. The result is deterministic for a
    given ``seed``.
    """
    clean = noiseless_echo(grid, cfg, w, scene)
    return add_noise(clean, cfg, snr_db, seed)


def noiseless_echo(grid: ResourceGrid, cfg: UpaConfig, w: np.ndarray, scene: ScatterScene) -> np.ndarray:
    """Noise-free ``(PQ, K, L)`` echo of ``scene``."""
    dims = grid.dims
    K, L = dims.K, dims.L
    out = np.zeros((cfg.n_elements, K, L), dtype=complex)
    if len(scene) == 0:
        return out

    vmax = dims.max_unambiguous_velocity_mps
    for s in scene.scatterers:
        if abs(s.radial_velocity_mps) >= vmax:
            warnings.warn(
                f"radial velocity {s.radial_velocity_mps} m/s aliases (|v| >= {vmax:.2f} m/s)",
                stacklevel=2,
            )

    rng_m = np.array([s.range_m for s in scene.scatterers])
    vel = np.array([s.radial_velocity_mps for s in scene.scatterers])
    theta = np.array([s.angle.theta_rad for s in scene.scatterers])
    phi = np.array([s.angle.phi_rad for s in scene.scatterers])
    alpha = np.array([s.gain for s in scene.scatterers], dtype=complex)

    tau = 2.0 * rng_m / SPEED_OF_LIGHT
    f_d = 2.0 * vel / dims.wavelength_m
    spatial = effective_steering_matrix(cfg, w, theta, phi) * alpha[None, :]  # (PQ, N)
    delay = np.exp(-2j * np.pi * np.outer(np.arange(K) * dims.scs_hz, tau))  # (K, N)
    doppler = np.exp(2j * np.pi * np.outer(np.arange(L) * dims.symbol_duration_s, f_d))  # (L, N)

    for a in range(cfg.n_elements):
        out[a] = (delay * spatial[a]) @ doppler.T
    out *= grid.symbols[None, :, :]
    return out


def add_noise(clean: np.ndarray, cfg: UpaConfig, snr_db: float, seed: int | None) -> ReceivedGrid:
    """Add circular white Gaussian noise at the configured SNR."""
    if np.isnan(snr_db):
        raise ValueError("snr_db must not be NaN")
    var = noise_variance(cfg, snr_db)
    if var == 0.0:
        return ReceivedGrid(per_antenna=clean.copy(), snr_db=snr_db, noise_seed=seed)
    rng = np.random.default_rng(seed)
    scale = np.sqrt(var / 2.0)
    out = clean.astype(complex, copy=True)
    # One antenna at a time keeps the temporary noise buffer small.
    for a in range(out.shape[0]):
        noise = rng.standard_normal(out.shape[1:] + (2,)).view(np.complex128)[..., 0]
        out[a] += scale * noise
    return ReceivedGrid(per_antenna=out, snr_db=snr_db, noise_seed=seed)


# ---------------------------------------------------------------------------
# Geometric primitives
# ---------------------------------------------------------------------------


def rotation_from_ypr(yaw_deg: float, pitch_deg: float, roll_deg: float) -> np.ndarray:
    """Rotation ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``, angles in degrees."""
    y, p, r = np.deg2rad([yaw_deg, pitch_deg, roll_deg])
    cz, sz = np.cos(y), np.sin(y)
    cy, sy = np.cos(p), np.sin(p)
    cx, sx = np.cos(r), np.sin(r)
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    return rz @ ry @ rx


@dataclass(frozen=True)
class Rectangle:
    """Planar rectangle spanning its own local X-Y plane, posed by yaw-pitch-roll."""

    center: tuple[float, float, float]
    size: tuple[float, float]
    ypr_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def area(self) -> float:
        return float(self.size[0] * self.size[1])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        uv = (rng.random((n, 2)) - 0.5) * np.asarray(self.size, dtype=float)
        local = np.column_stack([uv, np.zeros(n)])
        return local @ rotation_from_ypr(*self.ypr_deg).T + np.asarray(self.center, dtype=float)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; only its surface is sampled."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]

    def faces(self) -> list[Rectangle]:
        cx, cy, cz = self.center
        sx, sy, sz = self.size
        return [
            Rectangle((cx, cy, cz + sz / 2), (sx, sy)),
            Rectangle((cx, cy, cz - sz / 2), (sx, sy)),
            Rectangle((cx + sx / 2, cy, cz), (sz, sy), (0.0, 90.0, 0.0)),
            Rectangle((cx - sx / 2, cy, cz), (sz, sy), (0.0, 90.0, 0.0)),
            Rectangle((cx, cy + sy / 2, cz), (sx, sz), (0.0, 0.0, 90.0)),
            Rectangle((cx, cy - sy / 2, cz), (sx, sz), (0.0, 0.0, 90.0)),
        ]

    @property
    def area(self) -> float:
        return sum(f.area for f in self.faces())


def sample_primitive_points(primitives: Sequence[Rectangle | Box], density: float, seed: int) -> np.ndarray:
    """Uniformly sample ``round(area * density)`` points on each primitive surface."""
    if not density > 0:
        raise ValueError(f"density must be > 0, got {density}")
    rng = np.random.default_rng(seed)
    chunks = []
    for prim in primitives:
        faces = prim.faces() if isinstance(prim, Box) else [prim]
        for face in faces:
            n = int(round(face.area * density))
            if n:
                chunks.append(face.sample(n, rng))
    return np.vstack(chunks) if chunks else np.zeros((0, 3))


def sample_scene_from_primitives(
    primitives: Sequence[Rectangle | Box], density: float, seed: int
) -> ScatterScene:
    """Static scene sampled on primitives given in the BS-local frame.

    Gains have unit magnitude and a seeded uniform random phase.
    """
    pts = sample_primitive_points(primitives, density, seed)
    phases = np.random.default_rng([seed, 1]).uniform(0, 2 * np.pi, len(pts))
    return scene_from_points(pts, gains=np.exp(1j * phases))
