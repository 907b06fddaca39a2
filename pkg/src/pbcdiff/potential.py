"""Oscillating pair potential and its tabulation.

U(r) = r^-15 + r^-3 * cos(k * (r - 1.25) - phi)

The r^-15 core keeps particles apart; the decaying cosine tail imprints a
wavelength controlled by ``k`` with phase ``phi``, which is what makes the
self-assembled structures in this package tunable.  The radial force
magnitude is -dU/dr:

f(r) = 15 r^-16 + 3 r^-4 cos(k (r - 1.25) - phi) + k r^-3 sin(k (r - 1.25) - phi)

Positive f means repulsion.  The force vector on particle i from particle j
is ``-f(r) * d_ij / r`` with ``d_ij`` the minimum-image displacement from i
to j.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

# Radius where the cosine argument crosses zero at phi = 0.
OSCILLATION_ORIGIN = 1.25

# Input ranges the conditional model is trained over; used for affine
# rescaling of condition vectors and as sweep defaults.
K_TRAIN_RANGE = (1.0, 15.0)
PHI_TRAIN_RANGE = (0.0, 6.0)
TEMPERATURE_TRAIN_RANGE = (0.01, 0.05)


@dataclass(frozen=True)
class OPPParams:
    """Oscillation parameters: wavenumber ``k`` and phase ``phi``."""

    k: float
    phi: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.k) and np.isfinite(self.phi)):
            raise ValueError("potential parameters must be finite")


def _check_r(r: ArrayLike) -> NDArray[np.float64]:
    arr = np.asarray(r, dtype=np.float64)
    if np.any(arr <= 0.0) or not np.all(np.isfinite(arr)):
        raise ValueError("separation must be positive and finite")
    return arr


def opp_energy(r: ArrayLike, params: OPPParams) -> NDArray[np.float64]:
    """Pair energy at separation ``r`` (scalar or array), r > 0."""
    arr = _check_r(r)
    theta = params.k * (arr - OSCILLATION_ORIGIN) - params.phi
    return arr**-15.0 + arr**-3.0 * np.cos(theta)


def opp_force(r: ArrayLike, params: OPPParams) -> NDArray[np.float64]:
    """Radial force magnitude -dU/dr at separation ``r``; positive repels."""
    arr = _check_r(r)
    theta = params.k * (arr - OSCILLATION_ORIGIN) - params.phi
    return (
        15.0 * arr**-16.0
        + 3.0 * arr**-4.0 * np.cos(theta)
        + params.k * arr**-3.0 * np.sin(theta)
    )


@dataclass(frozen=True)
class PotentialTable:
    """Regular-grid tabulation of the pair potential.

    Attributes:
        r: Separations, an inclusive linspace, strictly increasing.
        energy: ``opp_energy(r)``, bit-for-bit.
        force: ``opp_force(r)``, bit-for-bit.
        params: The parameters the table was built from.
    """

    r: NDArray[np.float64]
    energy: NDArray[np.float64]
    force: NDArray[np.float64]
    params: OPPParams

    def __post_init__(self) -> None:
        if not (self.r.shape == self.energy.shape == self.force.shape):
            raise ValueError("table columns must share one shape")
        if self.r.ndim != 1 or self.r.size < 2:
            raise ValueError("table needs at least two rows")
        if np.any(np.diff(self.r) <= 0.0):
            raise ValueError("table separations must be strictly increasing")

    @property
    def n_points(self) -> int:
        return int(self.r.size)


def tabulate(
    params: OPPParams,
    r_min: float = 0.75,
    r_max: float = 5.0,
    n_points: int = 1000,
) -> PotentialTable:
    """Tabulate energy and force on ``n_points`` separations in [r_min, r_max].

    Endpoints are included.  Raises ``ValueError`` for a non-positive or
    reversed range or fewer than two points.
    """
    if not (np.isfinite(r_min) and np.isfinite(r_max)):
        raise ValueError("table range must be finite")
    if r_min <= 0.0 or r_max <= r_min:
        raise ValueError("need 0 < r_min < r_max")
    if n_points < 2:
        raise ValueError("need at least two table points")
    r = np.linspace(r_min, r_max, n_points)
    return PotentialTable(r=r, energy=opp_energy(r, params), force=opp_force(r, params), params=params)
