"""Reference molecular dynamics engine.

Small NVE / Langevin engine used to generate training data: simple-cubic
initialization, truncated-and-shifted pair interactions under the minimum
image convention, velocity-Verlet integration, a BAOAB Langevin thermostat,
and a linear temperature-ramp annealing protocol (start hot at ten times
the target, cool to target, then hold).

Temperature convention: T = 2 KE / (3 N) with unit mass, so velocities
carry sqrt(T) scale.  Reduced units throughout; dt = 0.005 by default.

Forces support two evaluation paths, a naive all-pairs list and a cell
list, engineered to be bit-for-bit identical: both reduce the same
(i < j)-sorted surviving pair sequence with the same per-component
``np.bincount`` sums, and minimum-image shifts are exact for wrapped
coordinates, so the only degrees of freedom are the pair set (equal within
the cutoff) and the summation order (made equal by sorting).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from numpy.typing import NDArray

from .box import PeriodicBox, _min_image_wrapped, require_wrapped, wrap_within
from .io import Conformation
from .potential import OPPParams, opp_energy, opp_force

OVERLAP_FLOOR = 0.5


class OverlapError(RuntimeError):
    """Two particles came closer than the physical floor of the potential."""


class AnalyticOPP:
    """Direct evaluation of the oscillating pair potential."""

    def __init__(self, params: OPPParams) -> None:
        self.params = params

    def energy(self, r: NDArray) -> NDArray:
        return opp_energy(r, self.params)

    def force(self, r: NDArray) -> NDArray:
        return opp_force(r, self.params)


class TablePotential:
    """Linear interpolation of a tabulated pair interaction.

    Raises ``ValueError`` for separations below the table range rather than
    extrapolating; the caller's cutoff keeps separations under the top end.
    """

    def __init__(self, r: NDArray, energy: NDArray, force: NDArray) -> None:
        r = np.asarray(r, dtype=np.float64)
        if r.ndim != 1 or r.size < 2 or np.any(np.diff(r) <= 0):
            raise ValueError("table separations must be strictly increasing")
        self.r = r
        self._energy = np.asarray(energy, dtype=np.float64)
        self._force = np.asarray(force, dtype=np.float64)
        if self._energy.shape != r.shape or self._force.shape != r.shape:
            raise ValueError("table columns must share one shape")

    def _check(self, r: NDArray) -> NDArray:
        arr = np.asarray(r, dtype=np.float64)
        if np.any(arr < self.r[0]) or np.any(arr > self.r[-1]):
            raise ValueError(
                f"separation outside table range [{self.r[0]}, {self.r[-1]}]"
            )
        return arr

    def energy(self, r: NDArray) -> NDArray:
        return np.interp(self._check(r), self.r, self._energy)

    def force(self, r: NDArray) -> NDArray:
        return np.interp(self._check(r), self.r, self._force)


@dataclass(frozen=True)
class ForceField:
    """Interaction plus truncation scheme.

    mode "shift" subtracts the cutoff energy so U(cutoff) = 0; mode
    "force-shift" additionally tilts the energy so the force is continuous
    at the cutoff (still U(cutoff) = 0), which improves NVE conservation.
    method selects the naive all-pairs path or the cell list (identical
    results; the cell list falls back to naive when the box is under three
    cells per side).
    """

    interaction: Union[AnalyticOPP, TablePotential]
    cutoff: float
    mode: str = "shift"
    method: str = "naive"

    def __post_init__(self) -> None:
        if self.cutoff <= 0 or not np.isfinite(self.cutoff):
            raise ValueError("cutoff must be positive and finite")
        if self.mode not in ("shift", "force-shift"):
            raise ValueError("mode must be 'shift' or 'force-shift'")
        if self.method not in ("naive", "cell"):
            raise ValueError("method must be 'naive' or 'cell'")


def _candidate_pairs_naive(n: int) -> tuple[NDArray, NDArray]:
    return np.triu_indices(n, 1)


def _candidate_pairs_cell(
    positions: NDArray, box: PeriodicBox, cutoff: float
) -> Optional[tuple[NDArray, NDArray]]:
    """Candidate (i < j) pairs from a periodic cell list, (i, j)-sorted.

    Returns None when any side has fewer than three cells, in which case
    the neighbor-offset walk would alias cells.
    """
    n_cells = np.floor(box.lengths / cutoff).astype(int)
    if np.any(n_cells < 3):
        return None
    cell_size = box.lengths / n_cells
    coords = np.minimum((positions / cell_size).astype(int), n_cells - 1)
    cell_ids = (coords[:, 0] * n_cells[1] + coords[:, 1]) * n_cells[2] + coords[:, 2]
    order = np.argsort(cell_ids, kind="stable")
    sorted_ids = cell_ids[order]
    total = int(np.prod(n_cells))
    starts = np.searchsorted(sorted_ids, np.arange(total + 1))

    # Half of the 26 neighbor offsets, so each unordered cell pair appears
    # exactly once; same-cell pairs come from the in-cell triangle.
    offsets = [
        (dx, dy, dz)
        for dx in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dz in (-1, 0, 1)
        if (dz > 0) or (dz == 0 and dy > 0) or (dz == 0 and dy == 0 and dx > 0)
    ]
    pair_i: list[NDArray] = []
    pair_j: list[NDArray] = []
    for cx in range(n_cells[0]):
        for cy in range(n_cells[1]):
            for cz in range(n_cells[2]):
                cid = (cx * n_cells[1] + cy) * n_cells[2] + cz
                members = order[starts[cid] : starts[cid + 1]]
                if members.size == 0:
                    continue
                if members.size > 1:
                    a, b = np.triu_indices(members.size, 1)
                    pair_i.append(members[a])
                    pair_j.append(members[b])
                for dx, dy, dz in offsets:
                    ncid = (
                        ((cx + dx) % n_cells[0]) * n_cells[1] + (cy + dy) % n_cells[1]
                    ) * n_cells[2] + (cz + dz) % n_cells[2]
                    other = order[starts[ncid] : starts[ncid + 1]]
                    if other.size == 0:
                        continue
                    gi = np.repeat(members, other.size)
                    gj = np.tile(other, members.size)
                    pair_i.append(np.minimum(gi, gj))
                    pair_j.append(np.maximum(gi, gj))
    if not pair_i:
        return np.array([], dtype=np.int64), np.array([], dtype=np.int64)
    i = np.concatenate(pair_i)
    j = np.concatenate(pair_j)
    key = np.lexsort((j, i))
    return i[key], j[key]


def compute_forces(
    positions: NDArray,
    box: PeriodicBox,
    ff: ForceField,
) -> tuple[NDArray, float]:
    """Total force on every particle and the truncated potential energy.

    Raises ``OverlapError`` if any pair inside the cutoff sits closer than
    the physical floor (0.5), where the tabulated range of the potential
    ends and the r^-15 core makes configurations unphysical.
    """
    pts = require_wrapped(positions, box)
    n = pts.shape[0]
    if ff.cutoff > float(np.min(box.lengths)) / 2.0 + 1e-12:
        raise ValueError("cutoff must not exceed half the smallest box side")
    pairs = None
    if ff.method == "cell":
        pairs = _candidate_pairs_cell(pts, box, ff.cutoff)
    if pairs is None:
        pairs = _candidate_pairs_naive(n)
    pi, pj = pairs
    forces = np.zeros_like(pts)
    if pi.size == 0:
        return forces, 0.0
    disp = _min_image_wrapped(pts[pi], pts[pj], box)
    r2 = np.einsum("ij,ij->i", disp, disp)
    mask = r2 < ff.cutoff * ff.cutoff
    pi, pj, disp = pi[mask], pj[mask], disp[mask]
    r = np.sqrt(r2[mask])
    if np.any(r < OVERLAP_FLOOR):
        closest = float(r.min()) if r.size else math.inf
        raise OverlapError(
            f"pair distance {closest:.4f} below physical floor {OVERLAP_FLOOR}"
        )
    energy = ff.interaction.energy(r) - ff.interaction.energy(
        np.float64(ff.cutoff)
    )
    magnitude = ff.interaction.force(r)
    if ff.mode == "force-shift":
        f_c = ff.interaction.force(np.float64(ff.cutoff))
        energy = energy + f_c * (r - ff.cutoff)
        magnitude = magnitude - f_c
    # Force on i from j is -f(r) d_ij / r with d_ij the min-image i -> j.
    scaled = (magnitude / r)[:, None] * disp
    for comp in range(pts.shape[1]):
        forces[:, comp] = np.bincount(
            pi, weights=-scaled[:, comp], minlength=n
        ) + np.bincount(pj, weights=scaled[:, comp], minlength=n)
    return forces, float(np.sum(energy))


@dataclass
class MDState:
    """Mutable integrator state; positions stay wrapped."""

    positions: NDArray
    velocities: NDArray
    forces: NDArray
    potential_energy: float
    box: PeriodicBox
    step: int = 0

    @property
    def n_particles(self) -> int:
        return int(self.positions.shape[0])

    @property
    def kinetic_energy(self) -> float:
        return 0.5 * float(np.sum(self.velocities**2))

    @property
    def temperature(self) -> float:
        return 2.0 * self.kinetic_energy / (3.0 * self.n_particles)

    @property
    def total_energy(self) -> float:
        return self.potential_energy + self.kinetic_energy


@dataclass(frozen=True)
class MDConfig:
    """Protocol parameters for data-generation runs."""

    temperature: float
    n_particles: int = 216
    number_density: float = 1.0
    dt: float = 0.005
    cutoff: float = 3.0
    cutoff_mode: str = "shift"
    method: str = "naive"
    anneal_steps: int = 20000
    equil_steps: int = 20000
    start_factor: float = 10.0
    friction: float = 1.0
    perturbation: float = 0.1
    log_every: int = 100

    def __post_init__(self) -> None:
        if self.temperature <= 0 or not np.isfinite(self.temperature):
            raise ValueError("target temperature must be positive")
        if self.n_particles < 2:
            raise ValueError("need at least two particles")
        if self.number_density <= 0:
            raise ValueError("number density must be positive")
        if self.dt < 0:
            raise ValueError("dt must be non-negative")
        if self.anneal_steps < 1 or self.equil_steps < 0:
            raise ValueError("step counts must be positive")
        if self.friction <= 0 or self.start_factor <= 0:
            raise ValueError("friction and start factor must be positive")
        if self.log_every < 1:
            raise ValueError("log_every must be positive")

    @property
    def box(self) -> PeriodicBox:
        side = (self.n_particles / self.number_density) ** (1.0 / 3.0)
        return PeriodicBox.cubic(side)

    @property
    def start_temperature(self) -> float:
        return self.start_factor * abs(self.temperature)


def init_state(config: MDConfig, ff: ForceField, rng: np.random.Generator) -> MDState:
    """Lattice start: simple-cubic sites, jitter, Maxwell velocities.

    Sites fill an m^3 grid (m the cube-root ceiling of N) with spacing
    L / m, which for perfect-cube N equals density^(-1/3).  Each site is
    jittered by uniform(-perturbation, +perturbation) per component.
    Velocities are Gaussian, shifted to zero net momentum, then rescaled so
    the instantaneous temperature equals the hot-start value exactly.
    """
    n = config.n_particles
    box = config.box
    m = math.ceil(n ** (1.0 / 3.0))
    while m**3 < n:  # guard against cube-root rounding just below an integer
        m += 1
    spacing = box.lengths[0] / m
    idx = np.arange(m**3)[:n]
    sites = np.stack([idx // (m * m), (idx // m) % m, idx % m], axis=1)
    positions = wrap_within(
        sites * spacing
        + rng.uniform(-config.perturbation, config.perturbation, size=(n, 3)),
        box,
    )
    velocities = rng.standard_normal((n, 3))
    velocities -= velocities.mean(axis=0)
    t_now = float(np.sum(velocities**2)) / (3.0 * n)
    velocities *= math.sqrt(config.start_temperature / t_now)
    forces, pe = compute_forces(positions, box, ff)
    return MDState(
        positions=positions,
        velocities=velocities,
        forces=forces,
        potential_energy=pe,
        box=box,
        step=0,
    )


def step_nve(state: MDState, ff: ForceField, dt: float) -> MDState:
    """One velocity-Verlet step at constant energy."""
    v_half = state.velocities + (0.5 * dt) * state.forces
    x_new = wrap_within(state.positions + dt * v_half, state.box)
    forces, pe = compute_forces(x_new, state.box, ff)
    return MDState(
        positions=x_new,
        velocities=v_half + (0.5 * dt) * forces,
        forces=forces,
        potential_energy=pe,
        box=state.box,
        step=state.step + 1,
    )


def step_langevin(
    state: MDState,
    ff: ForceField,
    dt: float,
    temperature: float,
    friction: float,
    rng: np.random.Generator,
) -> MDState:
    """One BAOAB Langevin step at the given bath temperature."""
    v = state.velocities + (0.5 * dt) * state.forces
    x = state.positions + (0.5 * dt) * v
    c1 = math.exp(-friction * dt)
    c2 = math.sqrt((1.0 - c1 * c1) * temperature)
    v = c1 * v + c2 * rng.standard_normal(v.shape)
    x = wrap_within(x + (0.5 * dt) * v, state.box)
    forces, pe = compute_forces(x, state.box, ff)
    return MDState(
        positions=x,
        velocities=v + (0.5 * dt) * forces,
        forces=forces,
        potential_energy=pe,
        box=state.box,
        step=state.step + 1,
    )


def run_anneal(
    config: MDConfig, params: OPPParams, seed: int
) -> tuple[Conformation, list[tuple[int, float, float, float]]]:
    """Full data-generation protocol for one (k, phi, temperature) input.

    Anneals linearly from the hot start to the target over
    ``anneal_steps``, holds for ``equil_steps``, and returns the final
    conformation tagged with the condition plus a thermo log of
    (step, temperature, potential energy, kinetic energy) rows sampled
    every ``log_every`` steps and at the final step.
    """
    ff = ForceField(
        AnalyticOPP(params), config.cutoff, config.cutoff_mode, config.method
    )
    rng = np.random.default_rng(seed)
    state = init_state(config, ff, rng)
    log: list[tuple[int, float, float, float]] = []

    def log_state(st: MDState) -> None:
        log.append((st.step, st.temperature, st.potential_energy, st.kinetic_energy))

    log_state(state)
    total = config.anneal_steps + config.equil_steps
    t_start = config.start_temperature
    for step in range(total):
        if step < config.anneal_steps:
            frac = (step + 1) / config.anneal_steps
            bath = t_start + (config.temperature - t_start) * frac
        else:
            bath = config.temperature
        state = step_langevin(state, ff, config.dt, bath, config.friction, rng)
        if state.step % config.log_every == 0 or state.step == total:
            log_state(state)
    conf = Conformation(
        coordinates=state.positions,
        box=state.box,
        condition=(params.k, params.phi, config.temperature),
        source="reference-md",
        seed=seed,
        timestep=state.step,
    )
    return conf, log
