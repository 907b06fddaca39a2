"""Orthogonal periodic-box arithmetic.

Everything downstream (pair potentials, radial distribution functions, the
denoising network, the MD engine) sits on top of the four operations in this
module: wrapping coordinates into the box, minimum-image displacements,
periodic distances, and periodic k-nearest-neighbor graphs.

Coordinates handled here are always *wrapped*, i.e. every component lies in
``[0, L_d)`` for the box side ``L_d`` of its dimension.  Operations that
require wrapped input validate it and raise ``ValueError`` otherwise.  Because
wrapped inputs bound raw coordinate differences to ``(-L, L)``, the minimum
image needs at most a single ``+L`` or ``-L`` shift per component, and that
shift is exact in IEEE arithmetic (Sterbenz), which downstream code relies on
for bit-identical equivalence between alternative force paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray


@dataclass(frozen=True)
class PeriodicBox:
    """An orthogonal box with periodic boundaries in every dimension.

    Attributes:
        lengths: Side length per dimension, shape ``(ndim,)``, each finite
            and strictly positive.
    """

    lengths: NDArray[np.float64]

    def __post_init__(self) -> None:
        lengths = np.atleast_1d(np.asarray(self.lengths, dtype=np.float64)).copy()
        if lengths.ndim != 1 or lengths.size == 0:
            raise ValueError("box lengths must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(lengths)) or np.any(lengths <= 0.0):
            raise ValueError("box lengths must be finite and strictly positive")
        lengths.setflags(write=False)
        object.__setattr__(self, "lengths", lengths)

    @classmethod
    def cubic(cls, length: float, ndim: int = 3) -> "PeriodicBox":
        """A cube with the given side length."""
        return cls(np.full(ndim, float(length)))

    @property
    def ndim(self) -> int:
        return int(self.lengths.size)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PeriodicBox):
            return NotImplemented
        return self.lengths.shape == other.lengths.shape and bool(
            np.all(self.lengths == other.lengths)
        )

    def __hash__(self) -> int:
        return hash(self.lengths.tobytes())


def _as_coords(points: ArrayLike) -> NDArray[np.float64]:
    pts = np.asarray(points, dtype=np.float64)
    if not np.all(np.isfinite(pts)):
        raise ValueError("coordinates must be finite")
    return pts


def require_wrapped(points: ArrayLike, box: PeriodicBox) -> NDArray[np.float64]:
    """Validate that every component of ``points`` lies in [0, L).

    Returns the validated float64 array.  Raises ``ValueError`` on any
    component outside the box or any non-finite value.
    """
    pts = _as_coords(points)
    if np.any(pts < 0.0) or np.any(pts >= box.lengths):
        raise ValueError("coordinates must be wrapped into [0, L) per dimension")
    return pts


def wrap_within(points: ArrayLike, box: PeriodicBox) -> NDArray[np.float64]:
    """Wrap arbitrary finite coordinates into [0, L) per dimension.

    Args:
        points: Array whose last axis indexes box dimensions (or any shape
            broadcastable against ``box.lengths``).
        box: The periodic box.

    Returns:
        Array of the broadcast shape with every component in ``[0, L_d)``.
        Idempotent: wrapping already-wrapped input returns it bit-for-bit.
    """
    pts = _as_coords(points)
    out = np.mod(pts, box.lengths)
    # np.mod can round up to exactly L for tiny negative inputs
    # (np.mod(-1e-18, 10.0) == 10.0), which would break the half-open interval.
    return np.where(out >= box.lengths, out - box.lengths, out)


def min_image(a: ArrayLike, b: ArrayLike, box: PeriodicBox) -> NDArray[np.float64]:
    """Minimum-image displacement from ``a`` to ``b``.

    Args:
        a: Wrapped source coordinates.
        b: Wrapped destination coordinates (broadcastable against ``a``).
        box: The periodic box.

    Returns:
        Per-component displacement in ``(-L/2, +L/2]``; the exact half-box
        tie resolves to ``+L/2``.  Antisymmetric up to that tie:
        ``min_image(a, b) == -min_image(b, a)`` whenever no component sits
        exactly on the half-box boundary.
    """
    a = require_wrapped(a, box)
    b = require_wrapped(b, box)
    return _min_image_wrapped(a, b, box)


def _min_image_wrapped(
    a: NDArray[np.float64], b: NDArray[np.float64], box: PeriodicBox
) -> NDArray[np.float64]:
    """``min_image`` without revalidation, for callers that already checked."""
    dr = b - a
    half = 0.5 * box.lengths
    lengths = np.broadcast_to(box.lengths, dr.shape)
    np.subtract(dr, lengths, out=dr, where=dr > half)
    np.add(dr, lengths, out=dr, where=dr <= -half)
    return dr


def pbc_distance(a: ArrayLike, b: ArrayLike, box: PeriodicBox) -> NDArray[np.float64]:
    """Euclidean length of the minimum-image displacement from ``a`` to ``b``.

    Never exceeds ``norm(box.lengths) / 2``.
    """
    dr = min_image(a, b, box)
    return np.sqrt(np.sum(dr * dr, axis=-1))


@dataclass(frozen=True)
class NeighborGraph:
    """Directed k-nearest-neighbor graph under periodic boundaries.

    Attributes:
        edges: Integer array of shape ``(N * k, 2)``; row ``(i, j)`` is a
            directed edge from source node ``i`` to one of its ``k`` nearest
            neighbors ``j``.  Rows are grouped by source node; within a
            source, neighbors are ordered by (distance, node index).
        displacement: Minimum-image displacement per edge, source to
            destination, shape ``(N * k, ndim)``.
        k: Neighbors per node.
    """

    edges: NDArray[np.int64]
    displacement: NDArray[np.float64]
    k: int

    @property
    def n_nodes(self) -> int:
        return self.edges.shape[0] // self.k

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])


def pair_displacements(
    points: NDArray[np.float64], box: PeriodicBox
) -> NDArray[np.float64]:
    """All-pairs minimum-image displacement matrix, shape ``(N, N, ndim)``.

    ``result[i, j]`` points from particle ``i`` to particle ``j``.  Input must
    be wrapped.  Quadratic in memory; intended for the desk scales this
    package targets (N up to a few thousand).
    """
    pts = require_wrapped(points, box)
    if pts.ndim != 2:
        raise ValueError("points must have shape (N, ndim)")
    return _min_image_wrapped(pts[:, None, :], pts[None, :, :], box)


def knn_graph(points: ArrayLike, k: int, box: PeriodicBox) -> NeighborGraph:
    """Exact k-nearest-neighbor graph under the minimum-image metric.

    Args:
        points: Wrapped coordinates, shape ``(N, ndim)`` with ``ndim`` equal
            to the box dimension.
        k: Number of neighbors per node, ``0 < k < N``.
        box: The periodic box.

    Returns:
        A ``NeighborGraph`` with exactly ``k`` out-edges per node, self-edges
        excluded.  Distance ties break toward the lower node index, so the
        result is deterministic for any input, coincident particles included.
    """
    pts = require_wrapped(points, box)
    if pts.ndim != 2 or pts.shape[1] != box.ndim:
        raise ValueError("points must have shape (N, ndim) matching the box")
    n = pts.shape[0]
    if not 0 < k < n:
        raise ValueError(f"need 0 < k < N, got k={k}, N={n}")
    disp = _min_image_wrapped(pts[:, None, :], pts[None, :, :], box)
    d2 = np.einsum("ijd,ijd->ij", disp, disp)
    np.fill_diagonal(d2, np.inf)
    # A stable sort on exactly equal squared distances preserves column
    # order, which is ascending node index: the documented tie rule.
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    src = np.repeat(np.arange(n, dtype=np.int64), k)
    dst = order.astype(np.int64).ravel()
    edges = np.stack([src, dst], axis=1)
    return NeighborGraph(edges=edges, displacement=disp[src, dst], k=int(k))
