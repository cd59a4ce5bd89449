"""Channel estimation, range-Doppler maps and OS-CFAR detection."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
import scipy.fft
from scipy.ndimage import maximum_filter, rank_filter
from scipy.optimize import brentq

from .nr_grid import SPEED_OF_LIGHT, GridDims, ResourceGrid
from .scene import ReceivedGrid


class ChannelEstimationError(ZeroDivisionError):
    pass


class CfarConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelEstimate:
    per_antenna: np.ndarray  # (PQ, K, L)
    dims: GridDims | None = None


@dataclass(frozen=True)
class RangeDopplerMap:
    """Per-antenna maps and their coherently integrated power.

    ``per_antenna`` is ``None`` for maps built with ``keep_per_antenna=False``;
    spatial vectors are then evaluated from ``estimate`` one bin at a time.
    """

    per_antenna: np.ndarray | None  # (PQ, N_R, N_D) complex
    integrated: np.ndarray  # (N_R, N_D) real
    n_r: int
    n_d: int
    dims: GridDims | None = None
    estimate: ChannelEstimate | None = None

    def bin_vector(self, m: int, n: int) -> np.ndarray:
        """All antennas' map values at bin ``(m, n)``."""
        if self.per_antenna is not None:
            return self.per_antenna[:, m, n].copy()
        h = self.estimate.per_antenna
        _, K, L = h.shape
        rk = np.exp(2j * np.pi * m * np.arange(K) / self.n_r)
        dl = np.exp(-2j * np.pi * n * np.arange(L) / self.n_d)
        return np.einsum("akl,k,l->a", h, rk, dl)


@dataclass(frozen=True)
class RdPeak:
    m: int
    n: int  # signed Doppler bin
    power: float
    range_m: float
    velocity_mps: float


def next_pow2(x: int) -> int:
    return 1 << (int(x) - 1).bit_length()


def default_padding(dims: GridDims) -> tuple[int, int]:
    """Smallest powers of two covering twice the grid in each dimension."""
    return next_pow2(2 * dims.K), next_pow2(2 * dims.L)


def estimate_channel(rx: ReceivedGrid, tx: ResourceGrid) -> ChannelEstimate:
    """Remove the known symbols by element-wise division."""
    s = tx.symbols
    if np.any(s == 0):
        raise ChannelEstimationError("transmitted grid contains zero symbols; cannot divide")
    if rx.per_antenna.shape[1:] != s.shape:
        raise ValueError(f"received grid {rx.per_antenna.shape[1:]} does not match symbols {s.shape}")
    return ChannelEstimate(per_antenna=rx.per_antenna / s[None, :, :], dims=tx.dims)


def _delay_doppler(h: np.ndarray, n_r: int, n_d: int) -> np.ndarray:
    # ifft's 1/n scaling is moved onto the forward direction with norm="forward".
    out = scipy.fft.ifft(h, n=n_r, axis=-2, norm="forward")
    return scipy.fft.fft(out, n=n_d, axis=-1)


def compute_rdm(est: ChannelEstimate, n_r: int, n_d: int, keep_per_antenna: bool = True) -> RangeDopplerMap:
    """Zero-padded delay-Doppler transform of every antenna plus coherent integration.

    ``P[m, n] = sum_k sum_l H[k, l] exp(+j 2 pi m k / n_r) exp(-j 2 pi n l / n_d)``,
    unnormalised. With ``keep_per_antenna=False`` only the integrated map is
    materialised (the transform is linear, so it is the map of the
    antenna-summed estimate), which keeps large arrays within memory.
    """
    _, K, L = est.per_antenna.shape
    if n_r < K or n_d < L:
        raise ValueError(f"padding ({n_r}, {n_d}) smaller than data ({K}, {L})")
    if keep_per_antenna:
        per_ant = _delay_doppler(est.per_antenna, n_r, n_d)
        integrated = np.abs(per_ant.sum(axis=0)) ** 2
    else:
        per_ant = None
        integrated = np.abs(_delay_doppler(est.per_antenna.sum(axis=0), n_r, n_d)) ** 2
    return RangeDopplerMap(
        per_antenna=per_ant, integrated=integrated, n_r=n_r, n_d=n_d, dims=est.dims, estimate=est
    )


def dump_rdm(rdm: RangeDopplerMap, path: str | Path) -> None:
    """Write the integrated map as ``<u64 N_R><u64 N_D>`` followed by row-major float64, little-endian."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", rdm.n_r, rdm.n_d))
        fh.write(np.ascontiguousarray(rdm.integrated, dtype="<f8").tobytes())


def load_rdm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        n_r, n_d = struct.unpack("<QQ", fh.read(16))
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(n_r, n_d)


# ---------------------------------------------------------------------------
# OS-CFAR
# ---------------------------------------------------------------------------


def os_cfar_pfa(alpha: float, n_train: int, rank: int) -> float:
    """False-alarm probability of OS-CFAR on i.i.d. exponential (square-law) noise.

    ``Pfa = prod_{i=0}^{k-1} (N - i) / (N - i + alpha)`` for the ``k``-th
    smallest of ``N`` training cells.
    """
    i = np.arange(rank)
    return float(np.exp(np.sum(np.log(n_train - i) - np.log(n_train - i + alpha))))


@dataclass(frozen=True)
class CfarConfig:
    """Two-dimensional OS-CFAR settings; cell counts are per side.

    When ``scale_factor`` is ``None`` it is solved from ``pfa``. An optional
    ``dynamic_range_db`` drops cells that far below the map maximum, which
    keeps the sidelobe cross of a noise-free map from being declared.
    """

    guard_cells: tuple[int, int] = (2, 2)
    training_cells: tuple[int, int] = (8, 4)
    os_rank_fraction: float = 0.75
    pfa: float = 1e-4
    scale_factor: float | None = None
    min_peak_separation: int = 2
    dynamic_range_db: float | None = None

    def __post_init__(self):
        if min(self.guard_cells) < 0 or min(self.training_cells) < 1:
            raise CfarConfigError("guard cells must be >= 0 and training cells >= 1")
        if not 0 < self.os_rank_fraction <= 1:
            raise CfarConfigError(f"os_rank_fraction must be in (0, 1], got {self.os_rank_fraction}")
        if not 0 < self.pfa < 1:
            raise CfarConfigError(f"pfa must be in (0, 1), got {self.pfa}")
        if self.scale_factor is not None and not self.scale_factor > 0:
            raise CfarConfigError(f"scale_factor must be > 0, got {self.scale_factor}")
        if self.min_peak_separation < 1:
            raise CfarConfigError("min_peak_separation must be >= 1")
        if self.dynamic_range_db is not None and not self.dynamic_range_db > 0:
            raise CfarConfigError(f"dynamic_range_db must be > 0, got {self.dynamic_range_db}")

    @cached_property
    def footprint(self) -> np.ndarray:
        (gr, gd), (tr, td) = self.guard_cells, self.training_cells
        fp = np.ones((2 * (gr + tr) + 1, 2 * (gd + td) + 1), dtype=bool)
        fp[tr : tr + 2 * gr + 1, td : td + 2 * gd + 1] = False
        return fp

    @property
    def n_train(self) -> int:
        return int(self.footprint.sum())

    @property
    def rank(self) -> int:
        """1-based order statistic used as the noise estimate."""
        return max(1, int(np.ceil(self.os_rank_fraction * self.n_train)))

    @cached_property
    def threshold_factor(self) -> float:
        if self.scale_factor is not None:
            return float(self.scale_factor)
        n, k = self.n_train, self.rank
        hi = 1.0
        while os_cfar_pfa(hi, n, k) > self.pfa:
            hi *= 2.0
        return float(brentq(lambda a: np.log(os_cfar_pfa(a, n, k)) - np.log(self.pfa), 0.0, hi, xtol=1e-12))


def oscfar_threshold(power: np.ndarray, cfg: CfarConfig) -> np.ndarray:
    """Per-cell detection threshold with toroidal wrap at the map edges."""
    fp = cfg.footprint
    if fp.shape[0] > power.shape[0] or fp.shape[1] > power.shape[1]:
        raise CfarConfigError(f"CFAR window {fp.shape} larger than map {power.shape}")
    noise = rank_filter(power, rank=cfg.rank - 1, footprint=fp, mode="wrap")
    return cfg.threshold_factor * noise


def oscfar_mask(power: np.ndarray, cfg: CfarConfig) -> np.ndarray:
    """``power > oscfar_threshold(power, cfg)``, evaluated in two stages.

    Of the ``n`` training cells at most ``n - s`` lie outside a subset of
    size ``s``, so the subset's ``(k - n + s)``-th smallest value bounds the
    window's ``k``-th smallest from below. Cells failing against that cheaper
    bound cannot be detections; the exact order statistic is only taken at
    the remaining candidates. The result is identical to the direct form.
    """
    fp = cfg.footprint
    if fp.shape[0] > power.shape[0] or fp.shape[1] > power.shape[1]:
        raise CfarConfigError(f"CFAR window {fp.shape} larger than map {power.shape}")
    n, k = cfg.n_train, cfg.rank
    alpha = cfg.threshold_factor
    sub = fp.copy()
    sub[cfg.training_cells[0] :, :] = False  # training rows above the guard band
    j = k - (n - int(sub.sum()))
    if j < 1 or alpha <= 0:
        return power > alpha * rank_filter(power, rank=k - 1, footprint=fp, mode="wrap")
    bound = rank_filter(power, rank=j - 1, footprint=sub, mode="wrap")
    ms, ns = np.nonzero(power > alpha * bound)
    if ms.size > power.size // 2:
        return power > alpha * rank_filter(power, rank=k - 1, footprint=fp, mode="wrap")
    mask = np.zeros(power.shape, dtype=bool)
    if ms.size == 0:
        return mask
    hm, hn = fp.shape[0] // 2, fp.shape[1] // 2
    padded = np.pad(power, ((hm, hm), (hn, hn)), mode="wrap")
    vals = sliding_window_view(padded, fp.shape)[ms, ns][:, fp]
    kth = np.partition(vals, k - 1, axis=1)[:, k - 1]
    mask[ms, ns] = power[ms, ns] > alpha * kth
    return mask


def _signed_doppler(n: int, n_d: int) -> int:
    return n - n_d if n > n_d // 2 else n


def bin_to_range(m: int, n_r: int, dims: GridDims) -> float:
    return SPEED_OF_LIGHT * m / (2.0 * n_r * dims.scs_hz)


def bin_to_velocity(n: int, n_d: int, dims: GridDims) -> float:
    return dims.wavelength_m * n / (2.0 * n_d * dims.symbol_duration_s)


def oscfar_detect(rdm: RangeDopplerMap, cfg: CfarConfig, dims: GridDims | None = None) -> list[RdPeak]:
    """Detect peaks on the integrated map.

    Cells above the OS-CFAR threshold are kept only if they are the maximum
    of the ``(2s+1) x (2s+1)`` neighbourhood around them, ``s`` being
    ``min_peak_separation``. Peaks are returned strongest first.
    """
    dims = dims or rdm.dims
    if dims is None:
        raise ValueError("grid dimensions are needed to convert bins to range/velocity")
    power = rdm.integrated
    detected = oscfar_mask(power, cfg)
    if cfg.dynamic_range_db is not None:
        detected &= power >= power.max() * 10.0 ** (-cfg.dynamic_range_db / 10.0)
    if not detected.any():
        return []
    size = 2 * cfg.min_peak_separation + 1
    local_max = power >= maximum_filter(power, size=size, mode="wrap")
    ms, ns = np.nonzero(detected & local_max)
    order = np.lexsort((ns, ms, -power[ms, ns]))
    peaks = []
    for i in order:
        m, n = int(ms[i]), _signed_doppler(int(ns[i]), rdm.n_d)
        peaks.append(
            RdPeak(
                m=m,
                n=n,
                power=float(power[ms[i], ns[i]]),
                range_m=bin_to_range(m, rdm.n_r, dims),
                velocity_mps=bin_to_velocity(n, rdm.n_d, dims),
            )
        )
    return peaks


def extract_spatial_vector(rdm: RangeDopplerMap, peak: RdPeak) -> np.ndarray:
    """Per-antenna RDM values at the peak bin, vertical-major order."""
    if not 0 <= peak.m < rdm.n_r or not -rdm.n_d < peak.n < rdm.n_d:
        raise IndexError(f"peak bin ({peak.m}, {peak.n}) outside {rdm.n_r}x{rdm.n_d} map")
    return rdm.bin_vector(peak.m, peak.n % rdm.n_d)
