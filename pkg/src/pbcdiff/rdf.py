"""Radial distribution functions and the RDF mean-squared-error metric.

g(b) = H(b) / E(b), where H counts unordered pair distances falling in bin
b of a uniform grid on [0, r_max) with r_max half the smallest box side,
and E is the ideal-gas expectation

    E(b) = (N (N - 1) / 2) * V_shell(b) / V_box,
    V_shell(b) = (4 pi / 3) (r_{b+1}^3 - r_b^3).

Pairs at or beyond r_max are excluded.  An ideal gas gives g ~ 1 in every
bin; structure shows up as peaks.  Distances use the minimum image, so the
whole computation is translation invariant bit for bit.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.typing import NDArray

from .box import pair_displacements
from .io import Conformation


@dataclass(frozen=True)
class RDFVector:
    """A binned radial distribution function.

    Attributes:
        values: g per bin, shape (n_bins,), all finite and non-negative.
        r_max: Upper distance edge; bin b covers
            [b * r_max / n_bins, (b + 1) * r_max / n_bins).
    """

    values: NDArray[np.float64]
    r_max: float

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("rdf values must be a non-empty vector")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("rdf values must be finite and non-negative")
        if not (np.isfinite(self.r_max) and self.r_max > 0):
            raise ValueError("r_max must be positive and finite")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_bins(self) -> int:
        return int(self.values.size)

    @property
    def bin_width(self) -> float:
        return self.r_max / self.n_bins

    @property
    def bin_centers(self) -> NDArray[np.float64]:
        return (np.arange(self.n_bins) + 0.5) * self.bin_width


def compute_rdf(conf: Conformation, n_bins: int = 100) -> RDFVector:
    """Radial distribution function of one conformation.

    Needs at least two particles.  r_max is fixed at half the smallest box
    side so every counted distance is an unambiguous minimum image.
    """
    if n_bins < 1:
        raise ValueError("need at least one bin")
    n = conf.n_particles
    if n < 2:
        raise ValueError("rdf needs at least two particles")
    box = conf.box
    r_max = float(np.min(box.lengths)) / 2.0
    disp = pair_displacements(conf.coordinates, box)
    iu, ju = np.triu_indices(n, 1)
    d = np.sqrt(np.einsum("ij,ij->i", disp[iu, ju], disp[iu, ju]))
    scale = n_bins / r_max
    bins = np.floor(d * scale).astype(np.int64)
    counts = np.bincount(bins[bins < n_bins], minlength=n_bins).astype(np.float64)
    edges = np.arange(n_bins + 1) / scale
    shell_volumes = (4.0 * np.pi / 3.0) * (edges[1:] ** 3 - edges[:-1] ** 3)
    expected = (n * (n - 1) / 2.0) * shell_volumes / box.volume
    return RDFVector(values=counts / expected, r_max=r_max)


def rdf_mse(a: RDFVector, b: RDFVector) -> float:
    """Mean over bins of the squared difference of two RDFs.

    The two vectors must share bin count and r_max; comparing RDFs binned
    on different grids is a usage error, not a number.
    """
    if a.n_bins != b.n_bins:
        raise ValueError(f"bin counts differ: {a.n_bins} vs {b.n_bins}")
    if a.r_max != b.r_max:
        raise ValueError(f"r_max differs: {a.r_max} vs {b.r_max}")
    diff = a.values - b.values
    return float(np.mean(diff * diff))


def first_peak_bin(rdf: RDFVector) -> int:
    """Bin index of the global maximum (ties resolve to the lowest bin)."""
    return int(np.argmax(rdf.values))


def write_rdf_csv(path: Union[str, os.PathLike], rdf: RDFVector) -> None:
    """Emit (r_center, g) rows."""
    centers = rdf.bin_centers
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("r,g\n")
        for i in range(rdf.n_bins):
            fh.write(f"{centers[i]:.10g},{rdf.values[i]:.10g}\n")
