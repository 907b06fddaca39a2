"""Command-line workflows: data generation, training, sampling, evaluation.

Configuration is flat ``key = value`` text layered in three stages: built-in
defaults, then an optional ``--config`` file, then individual command-line
flags.  Every command that writes artifacts persists the effective
configuration beside them, and every run is deterministic given that file
plus the seed it records.

Exit codes: 0 success, 1 failed check or evaluation, 2 usage error,
3 unreadable or unparseable input.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import itertools
import json
import os
import sys
import time
from typing import Optional, Sequence

import numpy as np

from .box import PeriodicBox, knn_graph, min_image
from .diffusion import (
    UNIT_BOX,
    DiffusionSchedule,
    TrainConfig,
    sample,
    train,
)
from .io import (
    Conformation,
    ParseError,
    augment,
    format_lammps_script,
    load_checkpoint,
    load_conformation,
    load_dataset,
    parse_lammps_dump,
    save_checkpoint,
    save_conformation,
    save_dataset,
    write_loss_csv,
    write_table_file,
)
from .md import (
    AnalyticOPP,
    ForceField,
    MDConfig,
    compute_forces,
    init_state,
    run_anneal,
    step_langevin,
    step_nve,
)
from .network import (
    DenoiserConfig,
    DivergenceError,
    GlobalFeatures,
    init_params,
    loss_and_gradients,
)
from .potential import OPPParams, tabulate
from .rdf import compute_rdf, rdf_mse, write_rdf_csv
from .verify import (
    irwin_hall_wrapped_density,
    posterior_mc_check,
    wrapped_gaussian_uniformity,
)


class UsageError(Exception):
    """Bad flags, bad config keys, or unmet command preconditions."""


# ---------------------------------------------------------------------------
# Configuration

_CONFIG_SECTIONS: list[tuple[str, list[tuple[str, object]]]] = [
    ("run", [
        ("seed", 0),
        ("jobs", 1),
    ]),
    ("schedule", [
        ("diffusion_steps", 500),
        ("schedule_offset", 0.008),
    ]),
    ("model", [
        ("n_layers", 8),
        ("hidden", 32),
        ("k_neighbors", 32),
    ]),
    ("training", [
        ("epochs", 800),
        ("learning_rate", 0.005),
        ("lr_decay", 0.95),
        ("lr_decay_every", 100),
        ("log_every", 100),
    ]),
    ("md", [
        ("n_particles", 216),
        ("number_density", 1.0),
        ("dt", 0.005),
        ("cutoff", 3.0),
        ("cutoff_mode", "shift"),
        ("md_method", "naive"),
        ("anneal_steps", 20000),
        ("equil_steps", 20000),
        ("start_factor", 10.0),
        ("friction", 1.0),
        ("perturbation", 0.1),
        ("thermo_every", 100),
    ]),
    ("sweep", [
        ("k_min", 1.0),
        ("k_max", 15.0),
        ("k_count", 2),
        ("phi_min", 0.0),
        ("phi_max", 6.0),
        ("phi_count", 2),
        ("temp_min", 0.01),
        ("temp_max", 0.05),
        ("temp_count", 2),
        ("n_test", 0),
    ]),
    ("analysis", [
        ("rdf_bins", 100),
    ]),
]

DEFAULTS = {key: value for _, pairs in _CONFIG_SECTIONS for key, value in pairs}


def _coerce(key: str, text: str):
    """Parse a raw string for ``key`` using the default's type."""
    if key not in DEFAULTS:
        raise UsageError(f"unknown config key: {key}")
    default = DEFAULTS[key]
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        kind = type(default).__name__
        raise UsageError(f"config key {key} expects {kind}, got {text!r}") from None
    return text


def read_config_file(path: str) -> dict:
    """Parse a flat ``key = value`` file; # starts a comment."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        out[key] = _coerce(key, value)
    return out


def format_config(cfg: dict) -> str:
    lines = []
    for section, pairs in _CONFIG_SECTIONS:
        lines.append(f"# {section}")
        for key, _ in pairs:
            lines.append(f"{key} = {cfg[key]!r}" if isinstance(cfg[key], float) else f"{key} = {cfg[key]}")
        lines.append("")
    return "\n".join(lines)


def build_effective_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(read_config_file(args.config))
    for key in DEFAULTS:
        raw = getattr(args, "cfg_" + key, None)
        if raw is not None:
            cfg[key] = _coerce(key, raw)
    if cfg["jobs"] < 1:
        raise UsageError("jobs must be at least 1")
    return cfg


def _write_config(directory: str, cfg: dict, name: str = "run-config.txt") -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, name), "w", encoding="utf-8") as fh:
        fh.write(format_config(cfg))


def _schedule(cfg: dict) -> DiffusionSchedule:
    return DiffusionSchedule(cfg["diffusion_steps"], cfg["schedule_offset"])


def _box_side(cfg: dict) -> float:
    return (cfg["n_particles"] / cfg["number_density"]) ** (1.0 / 3.0)


def _md_config(cfg: dict, temperature: float) -> MDConfig:
    return MDConfig(
        temperature=temperature,
        n_particles=cfg["n_particles"],
        number_density=cfg["number_density"],
        dt=cfg["dt"],
        cutoff=cfg["cutoff"],
        cutoff_mode=cfg["cutoff_mode"],
        method=cfg["md_method"],
        anneal_steps=cfg["anneal_steps"],
        equil_steps=cfg["equil_steps"],
        start_factor=cfg["start_factor"],
        friction=cfg["friction"],
        perturbation=cfg["perturbation"],
        log_every=cfg["thermo_every"],
    )


# ---------------------------------------------------------------------------
# gen-data

def _grid_axis(lo: float, hi: float, count: int) -> list[float]:
    if count < 1:
        raise UsageError("sweep axis counts must be at least 1")
    if count == 1:
        return [float(lo)]
    if hi < lo:
        raise UsageError("sweep range is reversed")
    return [float(v) for v in np.linspace(lo, hi, count)]


def _run_one_md(task):
    index, mdc, params, seed = task
    conf, _ = run_anneal(mdc, params, seed)
    return index, conf


def cmd_gen_data(args: argparse.Namespace, cfg: dict) -> int:
    ks = _grid_axis(cfg["k_min"], cfg["k_max"], cfg["k_count"])
    phis = _grid_axis(cfg["phi_min"], cfg["phi_max"], cfg["phi_count"])
    temps = _grid_axis(cfg["temp_min"], cfg["temp_max"], cfg["temp_count"])
    points = [(p, "train") for p in itertools.product(ks, phis, temps)]

    root = np.random.SeedSequence(cfg["seed"])
    cond_stream, run_stream = root.spawn(2)
    if cfg["n_test"] > 0:
        crng = np.random.default_rng(cond_stream)
        for _ in range(cfg["n_test"]):
            draw = (
                crng.uniform(cfg["k_min"], cfg["k_max"]),
                crng.uniform(cfg["phi_min"], cfg["phi_max"]),
                crng.uniform(cfg["temp_min"], cfg["temp_max"]),
            )
            points.append((draw, "test"))
    seeds = run_stream.generate_state(len(points))

    os.makedirs(args.out, exist_ok=True)
    if args.emit_lammps:
        for i, ((k, phi, temp), _split) in enumerate(points):
            stem = f"point_{i:03d}"
            write_table_file(os.path.join(args.out, stem + ".table"), tabulate(OPPParams(k=k, phi=phi)))
            script = format_lammps_script(
                temperature=temp,
                num_steps=cfg["anneal_steps"] + cfg["equil_steps"],
                dump_every=cfg["thermo_every"],
                dump_file=stem + ".lammpstrj",
                table_file=stem + ".table",
                box_side=_box_side(cfg),
                lattice_density=cfg["number_density"],
                velocity_seed=int(seeds[i] % 99999999) + 1,
            )
            with open(os.path.join(args.out, stem + ".in"), "w", encoding="utf-8") as fh:
                fh.write(script)
        _write_config(args.out, cfg)
        print(f"emitted {len(points)} script/table pairs to {args.out}")
        return 0

    steps_per_run = cfg["anneal_steps"] + cfg["equil_steps"]
    est = len(points) * steps_per_run * 1.6e-5 * cfg["n_particles"]
    if est > 3600.0:
        print(
            f"warning: {len(points)} simulations x {steps_per_run} steps is "
            f"roughly {est / 3600.0:.1f} core-hours",
            file=sys.stderr,
        )

    tasks = [
        (i, _md_config(cfg, temp), OPPParams(k=k, phi=phi), int(seeds[i]))
        for i, ((k, phi, temp), _split) in enumerate(points)
    ]
    results: dict[int, Conformation] = {}
    skipped = []

    def note_failure(index, err):
        (k, phi, temp), split = points[index]
        skipped.append({
            "condition": [k, phi, temp],
            "split": split,
            "seed": int(seeds[index]),
            "reason": f"{type(err).__name__}: {err}",
        })
        print(f"[{index + 1}/{len(points)}] skipped ({type(err).__name__}: {err})", file=sys.stderr)

    if cfg["jobs"] > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            futures = {pool.submit(_run_one_md, task): task[0] for task in tasks}
            for future in concurrent.futures.as_completed(futures):
                index = futures[future]
                try:
                    _, conf = future.result()
                    results[index] = conf
                    print(f"[{index + 1}/{len(points)}] done")
                except Exception as err:
                    note_failure(index, err)
    else:
        for task in tasks:
            index = task[0]
            (k, phi, temp), _split = points[index]
            started = time.perf_counter()
            try:
                _, conf = _run_one_md(task)
            except Exception as err:
                note_failure(index, err)
                continue
            results[index] = conf
            print(
                f"[{index + 1}/{len(points)}] k={k:g} phi={phi:g} T={temp:g} "
                f"done in {time.perf_counter() - started:.1f}s"
            )

    if skipped:
        with open(os.path.join(args.out, "skipped.json"), "w", encoding="utf-8") as fh:
            json.dump(skipped, fh, indent=2)
            fh.write("\n")
    if not results:
        print("error: every simulation failed", file=sys.stderr)
        _write_config(args.out, cfg)
        return 1
    items = [(results[i], points[i][1], 0) for i in sorted(results)]
    save_dataset(args.out, items)
    _write_config(args.out, cfg)
    print(f"wrote {len(items)} conformations to {args.out}" + (f" ({len(skipped)} skipped)" if skipped else ""))
    return 0


# ---------------------------------------------------------------------------
# train

def cmd_train(args: argparse.Namespace, cfg: dict) -> int:
    items = load_dataset(args.dataset, split="train")
    if not items:
        raise UsageError(f"{args.dataset}: no train-split records")
    conditional = args.mode == "conditional"
    if conditional:
        untagged = [rec.path for _, rec in items if rec.condition is None]
        if untagged:
            raise UsageError(
                "conditional training needs a condition tag on every record; "
                "missing for " + ", ".join(untagged[:5])
            )
        dataset = [conf for conf, _ in items]
        provenance = {"mode": "conditional", "n_train_records": len(dataset)}
    else:
        if args.index is not None:
            if not 0 <= args.index < len(items):
                raise UsageError(f"--index must lie in 0..{len(items) - 1}")
            index = args.index
        else:
            picker = np.random.default_rng(np.random.SeedSequence((cfg["seed"], 11)))
            index = int(picker.integers(len(items)))
        base, record = items[index]
        dataset = augment(base)
        provenance = {
            "mode": "unconditional",
            "base_record": record.path,
            "n_augmentations": len(dataset),
        }

    dconfig = DenoiserConfig(
        n_layers=cfg["n_layers"],
        hidden=cfg["hidden"],
        k_neighbors=cfg["k_neighbors"],
        conditional=conditional,
    )
    tconfig = TrainConfig(
        epochs=cfg["epochs"],
        learning_rate=cfg["learning_rate"],
        lr_decay=cfg["lr_decay"],
        lr_decay_every=cfg["lr_decay_every"],
    )
    schedule = _schedule(cfg)
    _write_config(args.out, cfg)
    metadata = {"config": dict(cfg), **provenance}
    try:
        params, history = train(
            dataset, dconfig, tconfig, schedule, cfg["seed"], log_every=cfg["log_every"]
        )
    except DivergenceError as err:
        print(f"error: training diverged: {err}", file=sys.stderr)
        save_checkpoint(
            os.path.join(args.out, "checkpoint-diverged.npz"),
            err.params, schedule.n_steps, schedule.s,
            metadata={**metadata, "status": "diverged", "error": str(err)},
            loss_history=err.history,
        )
        write_loss_csv(os.path.join(args.out, "loss.csv"), err.history)
        return 1
    save_checkpoint(
        os.path.join(args.out, "checkpoint.npz"),
        params, schedule.n_steps, schedule.s,
        metadata={**metadata, "status": "ok"},
        loss_history=history,
    )
    write_loss_csv(os.path.join(args.out, "loss.csv"), history)
    print(
        f"trained {tconfig.epochs} epochs on {len(dataset)} conformations; "
        f"final loss {history[-1]:.6f}"
    )
    print("checkpoint: " + os.path.join(args.out, "checkpoint.npz"))
    return 0


# ---------------------------------------------------------------------------
# sample

def _parse_condition(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError("--condition expects K,PHI,TEMPERATURE")
    try:
        k, phi, temp = (float(p) for p in parts)
    except ValueError:
        raise UsageError(f"--condition expects three numbers, got {text!r}") from None
    return (k, phi, temp)


def _sample_worker(task):
    index, params, steps, offset, n_particles, side, condition, child, trace_steps = task
    schedule = DiffusionSchedule(steps, offset)
    box = PeriodicBox.cubic(side)
    rng = np.random.default_rng(child)
    conf, trace = sample(
        n_particles, params, schedule, box, rng,
        condition=condition, trace_steps=trace_steps,
    )
    return index, conf, trace


def cmd_sample(args: argparse.Namespace, cfg: dict) -> int:
    params, steps, offset, _meta, _history = load_checkpoint(args.checkpoint)
    condition = _parse_condition(args.condition) if args.condition else None
    if params.config.conditional and condition is None:
        raise UsageError("checkpoint is conditional: pass --condition K,PHI,TEMPERATURE")
    if not params.config.conditional and condition is not None:
        raise UsageError("checkpoint is unconditional: --condition is not allowed")
    if args.count < 1:
        raise UsageError("--count must be positive")

    trace_steps = None
    if args.trace_steps and not args.trace:
        raise UsageError("--trace-steps requires --trace")
    if args.trace:
        if args.trace_steps:
            try:
                wanted = {int(p) for p in args.trace_steps.split(",")}
            except ValueError:
                raise UsageError(f"--trace-steps expects integers, got {args.trace_steps!r}") from None
        else:
            wanted = {steps, steps - 10, 100, 10, 0}
        trace_steps = sorted(t for t in wanted if 0 <= t <= steps)
        if not trace_steps:
            raise UsageError("no trace steps fall inside the schedule")

    root = np.random.SeedSequence(cfg["seed"])
    children = root.spawn(args.count)
    tasks = [
        (
            i, params, steps, offset, cfg["n_particles"], _box_side(cfg),
            condition, children[i], trace_steps,
        )
        for i in range(args.count)
    ]
    os.makedirs(args.out, exist_ok=True)
    results = {}
    if cfg["jobs"] > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            for index, conf, trace in pool.map(_sample_worker, tasks):
                results[index] = (conf, trace)
    else:
        for task in tasks:
            index, conf, trace = _sample_worker(task)
            results[index] = (conf, trace)

    trace_dir = os.path.join(args.out, "trace")
    for i in range(args.count):
        conf, trace = results[i]
        save_conformation(os.path.join(args.out, f"sample_{i:03d}.npz"), conf)
        for t in sorted(trace, reverse=True):
            os.makedirs(trace_dir, exist_ok=True)
            save_conformation(os.path.join(trace_dir, f"sample_{i:03d}_t{t:04d}.npz"), trace[t])
    _write_config(args.out, cfg)
    suffix = f" (+{len(trace_steps)} trace states each)" if trace_steps else ""
    print(f"wrote {args.count} samples to {args.out}{suffix}")
    return 0


# ---------------------------------------------------------------------------
# eval

CATEGORIES = ("Unconditional", "Conditional (Train)", "Conditional (Test)")


def _load_eval_set(path: str) -> list[tuple[str, Conformation, Optional[str]]]:
    """Load (name, conformation, split) triples from a file or directory.

    Accepts a single .npz conformation, a dataset directory with a
    manifest, or a plain directory of .npz conformations.
    """
    if os.path.isfile(path):
        return [(os.path.basename(path), load_conformation(path), None)]
    if os.path.isfile(os.path.join(path, "manifest.json")):
        return [
            (rec.path, conf, rec.split) for conf, rec in load_dataset(path)
        ]
    if not os.path.isdir(path):
        raise FileNotFoundError(f"{path}: no such file or directory")
    names = sorted(n for n in os.listdir(path) if n.endswith(".npz"))
    if not names:
        raise UsageError(f"{path}: no .npz conformations found")
    return [(n, load_conformation(os.path.join(path, n)), None) for n in names]


def _condition_key(condition):
    if condition is None:
        return None
    return tuple(round(float(c), 9) for c in condition)


def cmd_eval(args: argparse.Namespace, cfg: dict) -> int:
    generated = _load_eval_set(args.generated)
    references = _load_eval_set(args.reference)

    by_condition = {}
    for name, conf, split in references:
        key = _condition_key(conf.condition)
        if key not in by_condition:
            by_condition[key] = (conf, split)
    sole_reference = None
    if len(by_condition) == 1:
        sole_reference = next(iter(by_condition.values()))

    rows = []
    missing = []
    for name, conf, _split in generated:
        key = _condition_key(conf.condition)
        matched = by_condition.get(key)
        if matched is None and key is None and sole_reference is not None:
            matched = sole_reference
        if matched is None:
            missing.append((name, "no reference with matching condition"))
            continue
        ref_conf, ref_split = matched
        try:
            mse = rdf_mse(
                compute_rdf(conf, cfg["rdf_bins"]),
                compute_rdf(ref_conf, cfg["rdf_bins"]),
            )
        except ValueError as err:
            missing.append((name, f"incompatible boxes: {err}"))
            continue
        if key is None:
            category = CATEGORIES[0]
        elif ref_split == "test":
            category = CATEGORIES[2]
        else:
            category = CATEGORIES[1]
        rows.append((name, conf.condition, category, mse))

    header = f"{'sample':<28} {'k':>8} {'phi':>8} {'temp':>8}  {'category':<20} {'rdf_mse':>10}"
    print(header)
    for name, condition, category, mse in rows:
        k, phi, temp = condition if condition else (float("nan"),) * 3
        cols = f"{k:>8.4g} {phi:>8.4g} {temp:>8.4g}" if condition else f"{'-':>8} {'-':>8} {'-':>8}"
        print(f"{name:<28} {cols}  {category:<20} {mse:>10.5f}")

    means = {}
    for category in CATEGORIES:
        values = [mse for _, _, cat, mse in rows if cat == category]
        means[category] = (float(np.mean(values)) if values else None, len(values))
    print()
    print(" | ".join(CATEGORIES))
    print(" | ".join(
        f"{means[c][0]:.5f} (n={means[c][1]})" if means[c][0] is not None else f"- (n=0)"
        for c in CATEGORIES
    ))
    if missing:
        print(f"missing pairs: {len(missing)} (excluded from means)")
        for name, reason in missing:
            print(f"  {name}: {reason}")

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "eval.csv"), "w", encoding="utf-8") as fh:
            fh.write("sample,k,phi,temperature,category,rdf_mse\n")
            for name, condition, category, mse in rows:
                k, phi, temp = condition if condition else ("", "", "")
                fh.write(f"{name},{k},{phi},{temp},{category},{mse:.10g}\n")
        with open(os.path.join(args.out, "eval-means.csv"), "w", encoding="utf-8") as fh:
            fh.write(",".join(f'"{c}"' for c in CATEGORIES) + "\n")
            fh.write(",".join(
                f"{means[c][0]:.10g}" if means[c][0] is not None else ""
                for c in CATEGORIES
            ) + "\n")
        _write_config(args.out, cfg)

    if not rows:
        print("error: no generated/reference pairs could be scored", file=sys.stderr)
        return 1
    if args.fail_above is not None:
        worst = max(mean for mean, _count in means.values() if mean is not None)
        if worst > args.fail_above:
            print(f"error: worst category mean {worst:.5f} exceeds {args.fail_above}", file=sys.stderr)
            return 1
    return 0


# ---------------------------------------------------------------------------
# rdf

def _svg_line_plot(xs, ys, xlabel: str, ylabel: str) -> str:
    width, height = 640, 440
    left, right, top, bottom = 64, 20, 24, 52
    plot_w = width - left - right
    plot_h = height - top - bottom
    x_max = max(float(xs[-1]), 1e-12)
    y_max = max(max(float(v) for v in ys), 1e-12) * 1.05

    def px(x):
        return left + x / x_max * plot_w

    def py(y):
        return top + plot_h - y / y_max * plot_h

    points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="black" stroke-width="1"/>',
    ]
    for i in range(6):
        x = x_max * i / 5
        y = y_max * i / 5
        parts.append(
            f'<line x1="{px(x):.2f}" y1="{top + plot_h}" x2="{px(x):.2f}" '
            f'y2="{top + plot_h + 5}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{px(x):.2f}" y="{top + plot_h + 20}" font-size="12" '
            f'text-anchor="middle">{x:.3g}</text>'
        )
        parts.append(
            f'<line x1="{left - 5}" y1="{py(y):.2f}" x2="{left}" '
            f'y2="{py(y):.2f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{left - 9}" y="{py(y) + 4:.2f}" font-size="12" '
            f'text-anchor="end">{y:.3g}</text>'
        )
    parts.append(
        f'<polyline points="{points}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>'
    )
    parts.append(
        f'<text x="{left + plot_w / 2}" y="{height - 12}" font-size="14" '
        f'text-anchor="middle">{xlabel}</text>'
    )
    parts.append(
        f'<text x="16" y="{top + plot_h / 2}" font-size="14" text-anchor="middle" '
        f'transform="rotate(-90 16 {top + plot_h / 2})">{ylabel}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_rdf(args: argparse.Namespace, cfg: dict) -> int:
    path = args.conformation
    if path.endswith(".npz"):
        conf = load_conformation(path)
    else:
        with open(path, "r", encoding="utf-8") as fh:
            snapshots = parse_lammps_dump(fh.read())
        try:
            conf = snapshots[args.snapshot]
        except IndexError:
            raise UsageError(
                f"--snapshot {args.snapshot} out of range for {len(snapshots)} snapshots"
            ) from None
    vector = compute_rdf(conf, cfg["rdf_bins"])
    write_rdf_csv(args.out, vector)
    _write_config(os.path.dirname(args.out) or ".", cfg, name=os.path.basename(args.out) + ".config.txt")
    print(f"wrote {cfg['rdf_bins']} bins to {args.out}")
    if args.plot:
        with open(args.plot, "w", encoding="utf-8") as fh:
            fh.write(_svg_line_plot(vector.bin_centers, vector.values, "r", "g(r)"))
        print(f"wrote plot to {args.plot}")
    return 0


# ---------------------------------------------------------------------------
# verify

def _brute_min_image(a: np.ndarray, b: np.ndarray, box: PeriodicBox) -> np.ndarray:
    base = b - a
    shifts = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=3)))
    candidates = base[:, None, :] + shifts[None, :, :] * box.lengths
    pick = np.argmin(np.sum(candidates**2, axis=2), axis=1)
    return candidates[np.arange(len(a)), pick]


def _brute_knn_edges(points: np.ndarray, k: int, box: PeriodicBox) -> np.ndarray:
    n = len(points)
    edges = []
    for i in range(n):
        disp = _brute_min_image(np.broadcast_to(points[i], (n, 3)).copy(), points, box)
        d2 = np.sum(disp * disp, axis=1)
        d2[i] = np.inf
        for j in np.lexsort((np.arange(n), d2))[:k]:
            edges.append((i, int(j)))
    return np.array(edges)


def _suite_uniformity() -> list[dict]:
    checks = []
    report = wrapped_gaussian_uniformity(1.0, 100000, np.random.default_rng(20))
    checks.append({
        "suite": "uniformity", "name": "ks_wrapped_gaussian",
        "passed": bool(report.statistic < 0.01),
        "statistic": report.statistic, "threshold": 0.01,
        "n_samples": report.n_samples,
    })
    probes = np.linspace(0.0, 1.0, 1000, endpoint=False)
    deviation = max(abs(irwin_hall_wrapped_density(float(y)) - 1.0) for y in probes)
    outside = max(abs(irwin_hall_wrapped_density(y)) for y in (-0.5, 1.0, 2.5))
    checks.append({
        "suite": "uniformity", "name": "irwin_hall_flat",
        "passed": bool(deviation < 1e-9 and outside == 0.0),
        "max_deviation": deviation, "threshold": 1e-9,
    })
    return checks


def _suite_posterior() -> list[dict]:
    checks = []
    schedule = DiffusionSchedule()
    for t in (100, 250, 400):
        report = posterior_mc_check(t, schedule, 200000, np.random.default_rng(7))
        relative = abs(report.empirical_mean - report.formula_mean) / abs(report.formula_mean)
        checks.append({
            "suite": "posterior", "name": f"mc_moments_t{t}",
            "passed": bool(relative < 0.02 and report.supported == "posterior"),
            "relative_mean_error": relative, "threshold": 0.02,
            "variance_supported": report.supported,
            "n_conditioned": report.n_conditioned,
        })
    return checks


def _suite_geometry() -> list[dict]:
    checks = []
    rng = np.random.default_rng(31)
    box = PeriodicBox.cubic(5.0)
    a = rng.random((10000, 3)) * box.lengths
    b = rng.random((10000, 3)) * box.lengths
    exact = np.array_equal(min_image(a, b, box), _brute_min_image(a, b, box))
    checks.append({
        "suite": "geometry", "name": "min_image_vs_27_images",
        "passed": bool(exact), "n_pairs": 10000,
    })
    mismatches = 0
    for _trial in range(5):
        points = rng.random((64, 3)) * box.lengths
        graph = knn_graph(points, 8, box)
        if not np.array_equal(graph.edges, _brute_knn_edges(points, 8, box)):
            mismatches += 1
    checks.append({
        "suite": "geometry", "name": "knn_vs_brute_force",
        "passed": mismatches == 0, "n_clouds": 5, "mismatches": mismatches,
    })
    return checks


def _suite_gradients() -> list[dict]:
    config = DenoiserConfig(
        n_layers=2, hidden=4, k_neighbors=3,
        conv_mlp_hidden=(4,), out_mlp_hidden=(8,),
    )
    params = init_params(config, seed=3).astype(np.float64)
    rng = np.random.default_rng(0)
    x_t = rng.random((10, 3))
    eps = rng.standard_normal((10, 3))
    batch = [(x_t, GlobalFeatures.from_raw(0.5), eps)]
    _, grads = loss_and_gradients(batch, params, UNIT_BOX)
    step = 1e-6
    worst = 0.0
    for i in rng.choice(params.n_params, size=50, replace=False):
        original = params.flat[i]
        params.flat[i] = original + step
        up, _ = loss_and_gradients(batch, params, UNIT_BOX)
        params.flat[i] = original - step
        down, _ = loss_and_gradients(batch, params, UNIT_BOX)
        params.flat[i] = original
        fd = (up - down) / (2.0 * step)
        scale = max(abs(fd), abs(grads[i]), 1e-8)
        worst = max(worst, abs(fd - grads[i]) / scale)
    return [{
        "suite": "gradients", "name": "backprop_vs_finite_difference",
        "passed": bool(worst < 1e-4),
        "worst_relative_error": worst, "threshold": 1e-4, "n_probed": 50,
    }]


def _suite_md() -> list[dict]:
    checks = []
    rng = np.random.default_rng(40)
    interaction = AnalyticOPP(OPPParams(k=3.0, phi=0.0))

    side = 6.0
    box = PeriodicBox.cubic(side)
    grid = (np.stack(np.meshgrid(*[np.arange(6)] * 3, indexing="ij"), axis=-1).reshape(-1, 3) + 0.5)
    positions = np.mod(grid + rng.uniform(-0.05, 0.05, grid.shape), side)
    naive = compute_forces(positions, box, ForceField(interaction, 1.5, "force-shift", "naive"))
    cell = compute_forces(positions, box, ForceField(interaction, 1.5, "force-shift", "cell"))
    checks.append({
        "suite": "md", "name": "cell_list_matches_naive",
        "passed": bool(np.array_equal(naive[0], cell[0]) and naive[1] == cell[1]),
        "n_particles": len(positions),
    })

    mdc = MDConfig(
        temperature=0.01, n_particles=32, number_density=0.6,
        cutoff=1.8, cutoff_mode="force-shift", start_factor=1.0,
        perturbation=0.05,
    )
    ff = ForceField(interaction, mdc.cutoff, mdc.cutoff_mode, "naive")
    state = init_state(mdc, ff, rng)
    for _ in range(500):
        state = step_langevin(state, ff, mdc.dt, mdc.temperature, mdc.friction, rng)
    initial = state.total_energy
    scale = max(abs(initial), 1.0)
    worst = 0.0
    for _ in range(1500):
        state = step_nve(state, ff, mdc.dt)
        worst = max(worst, abs(state.total_energy - initial) / scale)
    checks.append({
        "suite": "md", "name": "nve_energy_drift",
        "passed": bool(worst < 1e-4),
        "worst_relative_drift": worst, "threshold": 1e-4, "n_steps": 1500,
    })
    return checks


_SUITES = {
    "uniformity": _suite_uniformity,
    "posterior": _suite_posterior,
    "geometry": _suite_geometry,
    "gradients": _suite_gradients,
    "md": _suite_md,
}


def cmd_verify(args: argparse.Namespace, cfg: dict) -> int:
    selected = args.suite or ["all"]
    if "all" in selected:
        selected = list(_SUITES)
    checks = []
    for suite in selected:
        checks.extend(_SUITES[suite]())
    for check in checks:
        status = "PASS" if check["passed"] else "FAIL"
        details = ", ".join(
            f"{key}={value:.6g}" if isinstance(value, float) else f"{key}={value}"
            for key, value in check.items()
            if key not in ("suite", "name", "passed")
        )
        print(f"[{status}] {check['suite']}/{check['name']}  {details}")
    n_passed = sum(1 for check in checks if check["passed"])
    all_passed = n_passed == len(checks)
    print(f"verify: {n_passed}/{len(checks)} checks passed")
    if args.json:
        summary = {"suites": selected, "checks": checks, "all_passed": all_passed}
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    return 0 if all_passed else 1


# ---------------------------------------------------------------------------
# entry point

def cmd_print_config(args: argparse.Namespace, cfg: dict) -> int:
    sys.stdout.write(format_config(cfg))
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "rdf": cmd_rdf,
    "verify": cmd_verify,
    "print-config": cmd_print_config,
}


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="key = value configuration file")
    group = parser.add_argument_group("config overrides")
    for key, default in DEFAULTS.items():
        group.add_argument(
            "--" + key.replace("_", "-"),
            dest="cfg_" + key,
            default=None,
            metavar="V",
            help=f"override {key} (default {default})",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pbcdiff",
        description="Periodic-boundary diffusion models for particle self-assembly.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def command(name, text):
        p = sub.add_parser(name, help=text, description=text)
        _add_common_flags(p)
        return p

    p = command("gen-data", "run the reference MD engine over a parameter sweep")
    p.add_argument("out", help="output dataset directory")
    p.add_argument(
        "--emit-lammps", action="store_true",
        help="write external MD scripts and pair tables instead of simulating",
    )

    p = command("train", "fit the denoiser to a saved dataset")
    p.add_argument("dataset", help="dataset directory from gen-data")
    p.add_argument("out", help="output directory for checkpoint and loss CSV")
    p.add_argument("--mode", choices=("unconditional", "conditional"), default="unconditional")
    p.add_argument(
        "--index", type=int, default=None,
        help="train-split record to fit in unconditional mode (default: seeded random pick)",
    )

    p = command("sample", "draw conformations from a trained checkpoint")
    p.add_argument("checkpoint", help="checkpoint .npz from train")
    p.add_argument("out", help="output directory")
    p.add_argument("--count", type=int, default=1, help="number of draws")
    p.add_argument("--condition", default=None, metavar="K,PHI,TEMP",
                   help="generation prompt for conditional checkpoints")
    p.add_argument("--trace", action="store_true",
                   help="also save intermediate states along the reverse process")
    p.add_argument("--trace-steps", default=None, metavar="T1,T2,...",
                   help="comma-separated diffusion times for --trace")

    p = command("eval", "score generated conformations against references")
    p.add_argument("generated", help="conformation file, directory, or dataset")
    p.add_argument("reference", help="conformation file, directory, or dataset")
    p.add_argument("--out", default=None, help="directory for CSV reports")
    p.add_argument("--fail-above", type=float, default=None, metavar="MSE",
                   help="exit nonzero if any category mean exceeds this")

    p = command("rdf", "radial distribution function of one conformation")
    p.add_argument("conformation", help=".npz conformation or LAMMPS dump file")
    p.add_argument("--out", default="rdf.csv", help="output CSV path")
    p.add_argument("--plot", default=None, metavar="SVG", help="also write a line plot")
    p.add_argument("--snapshot", type=int, default=-1,
                   help="snapshot index for multi-frame dump files")

    p = command("verify", "run statistical self-checks with fixed seeds")
    p.add_argument("--suite", action="append",
                   choices=tuple(_SUITES) + ("all",),
                   help="suite to run (repeatable; default all)")
    p.add_argument("--json", default=None, metavar="FILE",
                   help="write a machine-readable summary")

    command("print-config", "print the effective configuration and exit")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else (0 if code is None else 2)
    try:
        cfg = build_effective_config(args)
        return _COMMANDS[args.command](args, cfg)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except ParseError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
