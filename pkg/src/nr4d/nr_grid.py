"""5G NR numerology, resource-grid dimensions and known-symbol grids.

Only the frequency-domain grid is modelled. Every resource element carries a
unit-power QPSK symbol that the sensing receiver is assumed to know.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

SUBCARRIERS_PER_RB = 12
BASE_SCS_HZ = 15_000.0

# Uniform CP as a fraction of the useful symbol length (NR: 144/2048 normal, 512/2048 extended).
_CP_FRACTION = {"normal": 144 / 2048, "extended": 512 / 2048}
_SYMBOLS_PER_SLOT = {"normal": 14, "extended": 12}

_FR1_MAX_CARRIER_HZ = 7.125e9
_FR2_MIN_CARRIER_HZ = 24.25e9
_FR2_MAX_CARRIER_HZ = 71.0e9


class InvalidNumerologyError(ValueError):
    pass


class InvalidDimsError(ValueError):
    pass


@dataclass(frozen=True)
class Numerology:
    mu: int
    scs_hz: float
    slots_per_subframe: int
    symbols_per_slot: int
    cp_mode: str = "normal"


@dataclass(frozen=True)
class GridDims:
    """Size and timing of one transmitted resource grid.

    ``symbol_duration_s`` includes the cyclic prefix and is the ``T_s`` used
    by the Doppler phase ramp and by the velocity bin mapping.
    """

    numerology: Numerology
    n_rb: int
    n_subframes: int
    K: int
    L: int
    bandwidth_hz: float
    symbol_duration_s: float
    carrier_hz: float
    wavelength_m: float

    @property
    def scs_hz(self) -> float:
        return self.numerology.scs_hz

    def range_bin_m(self, n_r: int) -> float:
        return SPEED_OF_LIGHT / (2.0 * n_r * self.scs_hz)

    def velocity_bin_mps(self, n_d: int) -> float:
        return self.wavelength_m / (2.0 * n_d * self.symbol_duration_s)

    @property
    def max_unambiguous_velocity_mps(self) -> float:
        return self.wavelength_m / (4.0 * self.symbol_duration_s)


@dataclass(frozen=True)
class ResourceGrid:
    dims: GridDims
    symbols: np.ndarray  # (K, L) complex

    def __post_init__(self):
        if self.symbols.shape != (self.dims.K, self.dims.L):
            raise InvalidDimsError(
                f"symbol matrix shape {self.symbols.shape} != ({self.dims.K}, {self.dims.L})"
            )
        self.symbols.setflags(write=False)


def make_numerology(mu: int, cp_mode: str = "normal") -> Numerology:
    """Build the numerology for index ``mu`` (0..6)."""
    if isinstance(mu, bool) or int(mu) != mu or not 0 <= mu <= 6:
        raise InvalidNumerologyError(f"mu must be an integer in 0..6, got {mu!r}")
    if cp_mode not in _SYMBOLS_PER_SLOT:
        raise InvalidNumerologyError(f"cp_mode must be 'normal' or 'extended', got {cp_mode!r}")
    mu = int(mu)
    return Numerology(
        mu=mu,
        scs_hz=(2**mu) * BASE_SCS_HZ,
        slots_per_subframe=2**mu,
        symbols_per_slot=_SYMBOLS_PER_SLOT[cp_mode],
        cp_mode=cp_mode,
    )


def _check_frequency_range(num: Numerology, carrier_hz: float, bandwidth_hz: float) -> None:
    if carrier_hz <= _FR1_MAX_CARRIER_HZ:
        label, mus, max_bw = "FR1", (0, 1, 2), 100e6
    elif _FR2_MIN_CARRIER_HZ <= carrier_hz <= _FR2_MAX_CARRIER_HZ:
        label, mus, max_bw = "FR2", (2, 3, 4, 5, 6), 400e6
    else:
        warnings.warn(f"carrier {carrier_hz / 1e9:.3f} GHz lies outside FR1 and FR2", stacklevel=3)
        return
    if num.mu not in mus:
        warnings.warn(f"mu={num.mu} is not an {label} numerology", stacklevel=3)
    if bandwidth_hz > max_bw:
        warnings.warn(
            f"{bandwidth_hz / 1e6:.2f} MHz exceeds the {label} limit of {max_bw / 1e6:.0f} MHz",
            stacklevel=3,
        )


def make_grid_dims(num: Numerology, n_rb: int, n_subframes: int, carrier_hz: float) -> GridDims:
    """Derive the grid size and symbol timing.

    Raises
    ------
    InvalidDimsError
        If ``n_rb``, ``n_subframes`` or ``carrier_hz`` is not positive.
    """
    if n_rb < 1:
        raise InvalidDimsError(f"n_rb must be >= 1, got {n_rb}")
    if n_subframes < 1:
        raise InvalidDimsError(f"n_subframes must be >= 1, got {n_subframes}")
    if not carrier_hz > 0:
        raise InvalidDimsError(f"carrier_hz must be > 0, got {carrier_hz}")

    K = SUBCARRIERS_PER_RB * int(n_rb)
    L = int(n_subframes) * num.slots_per_subframe * num.symbols_per_slot
    bandwidth_hz = K * num.scs_hz
    _check_frequency_range(num, carrier_hz, bandwidth_hz)
    return GridDims(
        numerology=num,
        n_rb=int(n_rb),
        n_subframes=int(n_subframes),
        K=K,
        L=L,
        bandwidth_hz=bandwidth_hz,
        symbol_duration_s=(1.0 + _CP_FRACTION[num.cp_mode]) / num.scs_hz,
        carrier_hz=float(carrier_hz),
        wavelength_m=SPEED_OF_LIGHT / carrier_hz,
    )


QPSK = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2.0)


def fill_grid(dims: GridDims, seed: int) -> ResourceGrid:
    """Populate every resource element with a random unit-power QPSK symbol."""
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, 4, size=(dims.K, dims.L))
    return ResourceGrid(dims=dims, symbols=QPSK[idx])
