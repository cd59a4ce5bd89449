"""Uniform planar array (UPA) steering vectors.

The array lies in the local X-Y plane with ``P`` elements along X and ``Q``
along Y. Vectors are flattened vertical-major: element ``(p, q)`` sits at
flat index ``q * P + p``, i.e. ``a = a_q kron a_p``.

Direction convention: azimuth ``theta`` is measured in the X-Y plane from +X,
elevation ``phi`` from the X-Y plane toward +Z, so the unit direction is
``(cos(phi) cos(theta), cos(phi) sin(theta), sin(phi))``. Because the array
is planar, ``phi`` and ``-phi`` produce the same steering vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class UpaConfig:
    P: int
    Q: int
    d_over_lambda: float = 0.5

    def __post_init__(self):
        if self.P < 1 or self.Q < 1:
            raise ValueError(f"array needs P, Q >= 1, got P={self.P}, Q={self.Q}")
        if not self.d_over_lambda > 0:
            raise ValueError(f"d_over_lambda must be > 0, got {self.d_over_lambda}")

    @property
    def n_elements(self) -> int:
        return self.P * self.Q


@dataclass(frozen=True)
class Angle:
    theta_rad: float
    phi_rad: float

    def __post_init__(self):
        eps = 1e-12
        if not -np.pi - eps <= self.theta_rad <= np.pi + eps:
            raise ValueError(f"azimuth {self.theta_rad} outside [-pi, pi]")
        if not -np.pi / 2 - eps <= self.phi_rad <= np.pi / 2 + eps:
            raise ValueError(f"elevation {self.phi_rad} outside [-pi/2, pi/2]")

    @classmethod
    def from_degrees(cls, theta_deg: float, phi_deg: float) -> "Angle":
        return cls(float(np.deg2rad(theta_deg)), float(np.deg2rad(phi_deg)))

    @property
    def degrees(self) -> tuple[float, float]:
        return float(np.rad2deg(self.theta_rad)), float(np.rad2deg(self.phi_rad))


def steering_matrix(cfg: UpaConfig, theta, phi) -> np.ndarray:
    """Steering vectors for many directions at once.

    Parameters
    ----------
    cfg : UpaConfig
    theta, phi : array_like
        Azimuths and elevations in radians, broadcast to a common 1-D shape
        of length ``G``.

    Returns
    -------
    np.ndarray
        ``(P*Q, G)`` complex matrix, one steering vector per column.
    """
    theta, phi = np.broadcast_arrays(np.atleast_1d(theta), np.atleast_1d(phi))
    k = 2.0 * np.pi * cfg.d_over_lambda
    u = np.cos(phi) * np.cos(theta)
    v = np.cos(phi) * np.sin(theta)
    a_p = np.exp(-1j * k * np.outer(np.arange(cfg.P), u))  # (P, G)
    a_q = np.exp(-1j * k * np.outer(np.arange(cfg.Q), v))  # (Q, G)
    return (a_q[:, None, :] * a_p[None, :, :]).reshape(cfg.n_elements, -1)


def steering_vector(cfg: UpaConfig, ang: Angle) -> np.ndarray:
    return steering_matrix(cfg, ang.theta_rad, ang.phi_rad)[:, 0]


def _check_precoder(cfg: UpaConfig, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=complex)
    if w.shape != (cfg.n_elements,):
        raise ValueError(f"precoder length {w.shape} does not match P*Q={cfg.n_elements}")
    return w


def transmit_gain(cfg: UpaConfig, w: np.ndarray, theta, phi) -> np.ndarray:
    """Beamformed transmit gain ``a_Tx(theta, phi)^H w`` per direction."""
    w = _check_precoder(cfg, w)
    return steering_matrix(cfg, theta, phi).conj().T @ w


def effective_steering_matrix(cfg: UpaConfig, w: np.ndarray, theta, phi) -> np.ndarray:
    """Columns ``(a_Tx^H w) a_Rx`` for every direction; Tx and Rx arrays are identical."""
    w = _check_precoder(cfg, w)
    a = steering_matrix(cfg, theta, phi)
    return a * (a.conj().T @ w)[None, :]


def effective_steering(cfg: UpaConfig, ang: Angle, w: np.ndarray) -> np.ndarray:
    return effective_steering_matrix(cfg, w, ang.theta_rad, ang.phi_rad)[:, 0]


def matched_precoder(cfg: UpaConfig, boresight: Angle) -> np.ndarray:
    """Unit-norm beam steered at ``boresight``."""
    return steering_vector(cfg, boresight) / np.sqrt(cfg.n_elements)


def single_element_precoder(cfg: UpaConfig) -> np.ndarray:
    """Unit-norm precoder that drives only the first element (omnidirectional illumination)."""
    w = np.zeros(cfg.n_elements, dtype=complex)
    w[0] = 1.0
    return w


def angle_to_unit_vector(ang: Angle) -> np.ndarray:
    c = np.cos(ang.phi_rad)
    return np.array([c * np.cos(ang.theta_rad), c * np.sin(ang.theta_rad), np.sin(ang.phi_rad)])


def cartesian_to_spherical(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of ``range * angle_to_unit_vector``: returns (range, theta, phi) arrays."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    rng = np.linalg.norm(points, axis=1)
    theta = np.arctan2(points[:, 1], points[:, 0])
    horiz = np.hypot(points[:, 0], points[:, 1])
    phi = np.arctan2(points[:, 2], horiz)
    return rng, theta, phi
