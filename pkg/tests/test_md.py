"""MD engine tests: force oracle, conservation, reversibility, thermostat.

The force oracle is a literal per-pair python loop; the production path is
vectorized with optional cell lists and must agree with it bit-for-bit on
the physics (same pair set, same truncation algebra).
"""
import numpy as np
import pytest

from pbcdiff import MDConfig, OPPParams, PeriodicBox, opp_energy, opp_force, run_anneal, tabulate
from pbcdiff.box import min_image
from pbcdiff.md import (
    OVERLAP_FLOOR,
    AnalyticOPP,
    ForceField,
    OverlapError,
    TablePotential,
    compute_forces,
    init_state,
    step_langevin,
    step_nve,
)


def brute_forces(positions, box, params, cutoff, mode):
    """Reference: explicit double loop with minimum-image distances."""
    n = len(positions)
    forces = np.zeros((n, 3))
    pe = 0.0
    u_c = float(opp_energy(cutoff, params))
    f_c = float(opp_force(cutoff, params))
    for i in range(n):
        for j in range(i + 1, n):
            dr = min_image(positions[i], positions[j], box)
            r = float(np.linalg.norm(dr))
            if r >= cutoff:
                continue
            u = float(opp_energy(r, params)) - u_c
            f = float(opp_force(r, params))
            if mode == "force-shift":
                u += f_c * (r - cutoff)
                f -= f_c
            pe += u
            # force on i points away from j for positive f
            forces[i] -= f * dr / r
            forces[j] += f * dr / r
    return forces, pe


def jittered_grid(m, spacing, jitter, rng):
    """m^3 grid with per-site jitter; min separation spacing - 2 jitter."""
    g = (np.arange(m) + 0.5) * spacing
    pos = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    return pos + rng.uniform(-jitter, jitter, size=pos.shape)


@pytest.mark.parametrize("mode", ["shift", "force-shift"])
def test_forces_match_pair_loop(mode):
    box = PeriodicBox.cubic(6.0)
    rng = np.random.default_rng(0)
    params = OPPParams(k=7.0, phi=2.0)
    pos = jittered_grid(3, 2.0, 0.45, rng)  # 27 particles, min spacing 1.1
    ff = ForceField(AnalyticOPP(params), cutoff=2.5, mode=mode)
    forces, pe = compute_forces(pos, box, ff)
    ref_forces, ref_pe = brute_forces(pos, box, params, 2.5, mode)
    assert np.allclose(forces, ref_forces, atol=1e-10)
    assert pe == pytest.approx(ref_pe, abs=1e-10)


def test_forces_sum_to_zero():
    box = PeriodicBox.cubic(5.0)
    cfg = MDConfig(temperature=0.02, n_particles=64, number_density=0.8)
    ff = ForceField(AnalyticOPP(OPPParams(k=3.0, phi=1.0)), cutoff=2.0)
    state = init_state(cfg, ff, np.random.default_rng(1))
    assert np.allclose(state.forces.sum(axis=0), 0.0, atol=1e-9)


def test_shift_mode_energy_zero_at_cutoff():
    params = OPPParams(k=4.0, phi=0.0)
    box = PeriodicBox.cubic(20.0)
    cutoff = 3.0
    eps = 1e-9
    pos = np.array([[1.0, 1.0, 1.0], [1.0 + cutoff - eps, 1.0, 1.0]])
    ff = ForceField(AnalyticOPP(params), cutoff=cutoff, mode="shift")
    _, pe = compute_forces(pos, box, ff)
    assert abs(pe) < 1e-6


def test_force_shift_force_zero_at_cutoff():
    params = OPPParams(k=4.0, phi=0.0)
    box = PeriodicBox.cubic(20.0)
    cutoff = 3.0
    pos = np.array([[1.0, 1.0, 1.0], [1.0 + cutoff - 1e-7, 1.0, 1.0]])
    ff = ForceField(AnalyticOPP(params), cutoff=cutoff, mode="force-shift")
    forces, _ = compute_forces(pos, box, ff)
    assert np.max(np.abs(forces)) < 1e-5


def test_pair_beyond_cutoff_ignored():
    box = PeriodicBox.cubic(20.0)
    pos = np.array([[1.0, 1.0, 1.0], [8.0, 1.0, 1.0]])
    ff = ForceField(AnalyticOPP(OPPParams(k=1.0, phi=0.0)), cutoff=3.0)
    forces, pe = compute_forces(pos, box, ff)
    assert np.all(forces == 0.0)
    assert pe == 0.0


def test_overlap_raises():
    box = PeriodicBox.cubic(10.0)
    pos = np.array([[1.0, 1.0, 1.0], [1.0 + 0.9 * OVERLAP_FLOOR, 1.0, 1.0]])
    ff = ForceField(AnalyticOPP(OPPParams(k=1.0, phi=0.0)), cutoff=3.0)
    with pytest.raises(OverlapError):
        compute_forces(pos, box, ff)


def test_cutoff_beyond_half_box_rejected():
    box = PeriodicBox.cubic(4.0)
    pos = np.array([[1.0, 1.0, 1.0], [3.0, 1.0, 1.0]])
    ff = ForceField(AnalyticOPP(OPPParams(k=1.0, phi=0.0)), cutoff=2.5)
    with pytest.raises(ValueError):
        compute_forces(pos, box, ff)


def test_cell_list_matches_naive_bitwise():
    # L / cutoff = 4 cells per side keeps the cell path active
    params = OPPParams(k=7.0, phi=2.0)
    cfg = MDConfig(temperature=0.03, n_particles=216, number_density=1.0, cutoff=1.5)
    naive = ForceField(AnalyticOPP(params), cutoff=1.5, method="naive")
    cell = ForceField(AnalyticOPP(params), cutoff=1.5, method="cell")
    state = init_state(cfg, naive, np.random.default_rng(7))
    f_naive, pe_naive = compute_forces(state.positions, cfg.box, naive)
    f_cell, pe_cell = compute_forces(state.positions, cfg.box, cell)
    assert np.array_equal(f_naive, f_cell)
    assert pe_naive == pe_cell


def test_cell_list_under_three_cells_falls_back():
    # L / cutoff = 2 -> naive fallback, still correct
    params = OPPParams(k=5.0, phi=1.0)
    box = PeriodicBox.cubic(6.0)
    pos = jittered_grid(3, 2.0, 0.4, np.random.default_rng(3))
    ff_cell = ForceField(AnalyticOPP(params), cutoff=2.9, method="cell")
    ff_naive = ForceField(AnalyticOPP(params), cutoff=2.9, method="naive")
    f_cell, pe_cell = compute_forces(pos, box, ff_cell)
    f_naive, pe_naive = compute_forces(pos, box, ff_naive)
    assert np.array_equal(f_cell, f_naive)
    assert pe_cell == pe_naive


def test_table_potential_matches_analytic():
    params = OPPParams(k=6.0, phi=1.5)
    table = tabulate(params, r_min=0.75, r_max=4.0, n_points=4000)
    pot = TablePotential(table.r, table.energy, table.force)
    r = np.linspace(0.8, 3.9, 100)
    # interpolation error scales with curvature: large near the r^-15 core
    # in absolute terms but small relatively; tiny absolutely in the tail
    assert np.allclose(pot.energy(r), opp_energy(r, params), rtol=1e-3, atol=1e-3)
    assert np.allclose(pot.force(r), opp_force(r, params), rtol=1e-3, atol=1e-2)
    with pytest.raises(ValueError):
        pot.energy(np.array([0.5]))
    with pytest.raises(ValueError):
        pot.force(np.array([4.5]))


def test_init_state_lattice_spacing():
    # 216 particles at density 1 sit on a 6x6x6 simple-cubic grid, spacing 1
    cfg = MDConfig(temperature=0.02, n_particles=216, number_density=1.0, perturbation=0.0)
    ff = ForceField(AnalyticOPP(OPPParams(k=1.0, phi=0.0)), cutoff=2.5)
    state = init_state(cfg, ff, np.random.default_rng(0))
    assert state.n_particles == 216
    xs = np.unique(np.round(state.positions[:, 0], 12))
    assert len(xs) == 6
    assert np.allclose(np.diff(xs), 1.0)


def test_init_state_non_cube_counts():
    # 100 particles: 5^3 sites, first 100 used, all inside the box
    cfg = MDConfig(temperature=0.02, n_particles=100, number_density=0.7)
    ff = ForceField(AnalyticOPP(OPPParams(k=1.0, phi=0.0)), cutoff=2.0)
    state = init_state(cfg, ff, np.random.default_rng(2))
    assert state.n_particles == 100
    assert np.all(state.positions >= 0)
    assert np.all(state.positions < cfg.box.lengths)


def test_init_state_momentum_and_temperature():
    cfg = MDConfig(temperature=0.03, n_particles=64, number_density=0.8)
    ff = ForceField(AnalyticOPP(OPPParams(k=2.0, phi=0.5)), cutoff=2.0)
    state = init_state(cfg, ff, np.random.default_rng(5))
    # net momentum zero, instantaneous temperature exactly the hot start
    assert np.allclose(state.velocities.sum(axis=0), 0.0, atol=1e-12)
    assert state.temperature == pytest.approx(cfg.start_temperature, rel=1e-12)


def test_nve_energy_conservation_short():
    """Drift measured from an equilibrated state, not the lattice start.

    The jittered lattice carries excess potential energy that converts to
    heat; a short thermostatted settle first gives the standard
    conserve-from-equilibrium measurement.
    """
    cfg = MDConfig(
        temperature=0.01, n_particles=32, number_density=0.6,
        cutoff=1.8, cutoff_mode="force-shift", perturbation=0.05, start_factor=1.0,
    )
    ff = ForceField(AnalyticOPP(OPPParams(k=3.0, phi=1.0)), cfg.cutoff, cfg.cutoff_mode)
    rng = np.random.default_rng(11)
    state = init_state(cfg, ff, rng)
    for _ in range(1000):
        state = step_langevin(state, ff, cfg.dt, cfg.temperature, cfg.friction, rng)
    e0 = state.total_energy
    scale = max(abs(e0), 1.0)
    start_step = state.step
    for _ in range(2000):
        state = step_nve(state, ff, cfg.dt)
        assert abs(state.total_energy - e0) / scale < 1e-4
    assert state.step == start_step + 2000


def test_nve_time_reversible():
    cfg = MDConfig(
        temperature=0.02, n_particles=27, number_density=0.5,
        cutoff=1.5, cutoff_mode="force-shift", perturbation=0.05,
    )
    ff = ForceField(AnalyticOPP(OPPParams(k=2.0, phi=1.0)), cfg.cutoff, cfg.cutoff_mode)
    state = init_state(cfg, ff, np.random.default_rng(4))
    start = state.positions.copy()
    for _ in range(50):
        state = step_nve(state, ff, cfg.dt)
    state.velocities *= -1.0
    for _ in range(50):
        state = step_nve(state, ff, cfg.dt)
    drift = np.max(np.abs(min_image(state.positions, start, cfg.box)))
    assert drift < 1e-9


def test_langevin_holds_temperature():
    cfg = MDConfig(temperature=0.05, n_particles=64, number_density=0.7, cutoff=2.0)
    ff = ForceField(AnalyticOPP(OPPParams(k=2.0, phi=0.5)), cfg.cutoff)
    rng = np.random.default_rng(8)
    state = init_state(cfg, ff, rng)
    state.velocities *= np.sqrt(cfg.temperature / state.temperature)
    temps = []
    for _ in range(3000):
        state = step_langevin(state, ff, cfg.dt, cfg.temperature, cfg.friction, rng)
        temps.append(state.temperature)
    mean_t = float(np.mean(temps[1500:]))
    assert abs(mean_t - cfg.temperature) / cfg.temperature < 0.15


def test_run_anneal_output_contract():
    cfg = MDConfig(
        temperature=0.03, n_particles=27, number_density=0.5, cutoff=1.8,
        anneal_steps=300, equil_steps=200, log_every=100,
    )
    conf, thermo = run_anneal(cfg, OPPParams(k=7.0, phi=2.0), seed=42)
    assert conf.source == "reference-md"
    assert conf.condition == (7.0, 2.0, 0.03)
    assert conf.seed == 42
    assert conf.n_particles == 27
    assert conf.box == cfg.box
    steps = [row[0] for row in thermo]
    assert steps[0] == 0
    assert steps[-1] == 500
    assert all(len(row) == 4 for row in thermo)


def test_run_anneal_deterministic():
    cfg = MDConfig(
        temperature=0.02, n_particles=27, number_density=0.5, cutoff=1.8,
        anneal_steps=100, equil_steps=50,
    )
    c1, t1 = run_anneal(cfg, OPPParams(k=3.0, phi=1.0), seed=7)
    c2, t2 = run_anneal(cfg, OPPParams(k=3.0, phi=1.0), seed=7)
    assert np.array_equal(c1.coordinates, c2.coordinates)
    assert t1 == t2


def test_md_config_validation():
    with pytest.raises(ValueError):
        MDConfig(temperature=-0.1)
    with pytest.raises(ValueError):
        MDConfig(temperature=0.02, n_particles=1)
    with pytest.raises(ValueError):
        MDConfig(temperature=0.02, number_density=0.0)
    with pytest.raises(ValueError):
        ForceField(AnalyticOPP(OPPParams(k=1.0, phi=0.0)), cutoff=2.0, mode="abrupt")


def test_md_config_box_side():
    cfg = MDConfig(temperature=0.02, n_particles=216, number_density=1.0)
    assert cfg.box.lengths[0] == pytest.approx(6.0)
    cfg2 = MDConfig(temperature=0.02, n_particles=256, number_density=1.0)
    assert cfg2.box.lengths[0] == pytest.approx(256 ** (1 / 3))
