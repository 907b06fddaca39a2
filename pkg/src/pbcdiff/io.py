"""Data types and on-disk formats.

Holds the ``Conformation`` record everything passes around, the 48-fold
cubic symmetry augmentation, and readers/writers for: LAMMPS atom-style
dump files, LAMMPS pair-table files, a generated LAMMPS input script,
native ``.npz`` conformations and datasets with a JSON manifest, network
checkpoints, and small CSV emitters.  Parsers raise ``ParseError`` with a
line number; writers are atomic where a manifest is involved.
"""

from __future__ import annotations

import itertools
import json
import os
import tempfile
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from numpy.typing import NDArray

from .box import PeriodicBox, require_wrapped, wrap_within
from .network import DenoiserConfig, DenoiserParams
from .potential import PotentialTable

FORMAT_CONFORMATION = "pbcdiff-conformation"
FORMAT_DATASET = "pbcdiff-dataset"
FORMAT_CHECKPOINT = "pbcdiff-checkpoint"
FORMAT_VERSION = 1

SOURCES = ("reference-md", "lammps-dump", "sampled")
SPLITS = ("train", "test")


class ParseError(ValueError):
    """A malformed input file; carries the 1-based line number."""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Conformation:
    """One particle configuration with provenance.

    Attributes:
        coordinates: Wrapped positions, shape (N, 3).
        box: The periodic box the coordinates live in.
        condition: Optional raw (k, phi, temperature) tag.
        source: Where this came from: reference-md, lammps-dump, or sampled.
        seed: RNG seed that produced it, when known.
        timestep: Originating step (MD step or diffusion time), when known.
    """

    coordinates: NDArray[np.float64]
    box: PeriodicBox
    condition: Optional[tuple[float, float, float]] = None
    source: str = "reference-md"
    seed: Optional[int] = None
    timestep: Optional[int] = None

    def __post_init__(self) -> None:
        coords = require_wrapped(self.coordinates, self.box)
        if coords.ndim != 2 or coords.shape[1] != self.box.ndim:
            raise ValueError("coordinates must have shape (N, ndim) matching the box")
        if coords.shape[0] < 1:
            raise ValueError("need at least one particle")
        coords = coords.copy()
        coords.setflags(write=False)
        object.__setattr__(self, "coordinates", coords)
        if self.condition is not None:
            cond = tuple(float(c) for c in self.condition)
            if len(cond) != 3 or not all(np.isfinite(cond)):
                raise ValueError("condition must be a finite (k, phi, temperature) triple")
            object.__setattr__(self, "condition", cond)
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}")

    @property
    def n_particles(self) -> int:
        return int(self.coordinates.shape[0])


# ---------------------------------------------------------------------------
# Cubic symmetry augmentation

_PERMUTATIONS = tuple(itertools.permutations(range(3)))
_SIGNS = tuple(itertools.product((1.0, -1.0), repeat=3))


def n_augmentations() -> int:
    return len(_PERMUTATIONS) * len(_SIGNS)  # 48


def augmentation_matrix(aug_id: int) -> NDArray[np.float64]:
    """The signed permutation matrix for an augmentation id in [0, 48).

    Ids order permutation-major, sign-minor; id 0 is the identity.
    """
    if not 0 <= aug_id < n_augmentations():
        raise ValueError(f"augmentation id must lie in [0, {n_augmentations()})")
    perm = _PERMUTATIONS[aug_id // len(_SIGNS)]
    signs = _SIGNS[aug_id % len(_SIGNS)]
    mat = np.zeros((3, 3))
    for d in range(3):
        mat[d, perm[d]] = signs[d]
    return mat


def apply_augmentation(conf: Conformation, aug_id: int) -> Conformation:
    """Apply one cubic symmetry operation about the box center.

    Implemented as ``y_d = wrap(s_d * x_perm(d))``: rotating about the box
    center differs from rotating about the origin by a whole box length per
    negated axis, which the wrap absorbs.  Requires a cubic box.  Id 0
    returns the conformation unchanged.
    """
    lengths = conf.box.lengths
    if not np.all(lengths == lengths[0]):
        raise ValueError("symmetry augmentation requires a cubic box")
    if not 0 <= aug_id < n_augmentations():
        raise ValueError(f"augmentation id must lie in [0, {n_augmentations()})")
    perm = _PERMUTATIONS[aug_id // len(_SIGNS)]
    signs = np.array(_SIGNS[aug_id % len(_SIGNS)])
    coords = wrap_within(conf.coordinates[:, perm] * signs, conf.box)
    return replace(conf, coordinates=coords)


def augment(conf: Conformation) -> list[Conformation]:
    """All 48 cubic symmetry images, ordered by augmentation id."""
    return [apply_augmentation(conf, i) for i in range(n_augmentations())]


def translate_conformation(
    conf: Conformation, shift: NDArray[np.float64]
) -> Conformation:
    """Rigid translation with wrap; an optional extra augmentation."""
    coords = wrap_within(conf.coordinates + np.asarray(shift, dtype=np.float64), conf.box)
    return replace(conf, coordinates=coords)


# ---------------------------------------------------------------------------
# LAMMPS atom-style dump

_COORD_STYLES = (("x", "y", "z"), ("xs", "ys", "zs"))
_KNOWN_COLUMNS = {"id", "type", "x", "y", "z", "xs", "ys", "zs"}


class _Lines:
    """Line cursor that reports 1-based positions in errors."""

    def __init__(self, text: str) -> None:
        self.lines = text.splitlines()
        self.pos = 0

    def next(self, context: str) -> tuple[str, int]:
        while self.pos < len(self.lines):
            line = self.lines[self.pos]
            self.pos += 1
            if line.strip():
                return line, self.pos
        raise ParseError(f"truncated file: expected {context}", len(self.lines))

    def at_end(self) -> bool:
        return all(not l.strip() for l in self.lines[self.pos :])


def _parse_floats(line: str, n: int, lineno: int, context: str) -> list[float]:
    parts = line.split()
    if len(parts) != n:
        raise ParseError(f"expected {n} values for {context}, got {len(parts)}", lineno)
    try:
        return [float(p) for p in parts]
    except ValueError as err:
        raise ParseError(f"bad number in {context}: {err}", lineno) from None


def parse_lammps_dump(text: str) -> list[Conformation]:
    """Parse an atom-style dump into a list of conformations.

    Accepts multiple snapshots, unscaled (x y z) or scaled (xs ys zs)
    coordinates, arbitrary column order with an id column, and orthogonal
    boxes only.  Atoms are returned sorted by id; coordinates are shifted
    to a zero origin and wrapped.  Raises ``ParseError`` with a line
    number on any malformation: unknown columns, mixed coordinate styles,
    atom-count mismatches, or truncation.
    """
    cursor = _Lines(text)
    frames: list[Conformation] = []
    while not cursor.at_end():
        line, lineno = cursor.next("ITEM: TIMESTEP")
        if line.strip() != "ITEM: TIMESTEP":
            raise ParseError(f"expected 'ITEM: TIMESTEP', got {line.strip()!r}", lineno)
        line, lineno = cursor.next("timestep value")
        try:
            timestep = int(line.split()[0])
        except (ValueError, IndexError):
            raise ParseError("timestep must be an integer", lineno) from None

        line, lineno = cursor.next("ITEM: NUMBER OF ATOMS")
        if line.strip() != "ITEM: NUMBER OF ATOMS":
            raise ParseError(f"expected 'ITEM: NUMBER OF ATOMS', got {line.strip()!r}", lineno)
        line, lineno = cursor.next("atom count")
        try:
            n_atoms = int(line.split()[0])
        except (ValueError, IndexError):
            raise ParseError("atom count must be an integer", lineno) from None
        if n_atoms < 1:
            raise ParseError("atom count must be positive", lineno)

        line, lineno = cursor.next("ITEM: BOX BOUNDS")
        if not line.strip().startswith("ITEM: BOX BOUNDS"):
            raise ParseError(f"expected 'ITEM: BOX BOUNDS', got {line.strip()!r}", lineno)
        bounds = np.empty((3, 2))
        for d in range(3):
            line, lineno = cursor.next("box bounds row")
            lo, hi = _parse_floats(line, 2, lineno, "box bounds (orthogonal: lo hi)")
            if not hi > lo:
                raise ParseError("box bound must have hi > lo", lineno)
            bounds[d] = (lo, hi)
        box = PeriodicBox(bounds[:, 1] - bounds[:, 0])

        line, lineno = cursor.next("ITEM: ATOMS")
        if not line.strip().startswith("ITEM: ATOMS"):
            raise ParseError(f"expected 'ITEM: ATOMS', got {line.strip()!r}", lineno)
        columns = line.split()[2:]
        unknown = [c for c in columns if c not in _KNOWN_COLUMNS]
        if unknown:
            raise ParseError(f"unknown dump columns: {unknown}", lineno)
        if "id" not in columns:
            raise ParseError("dump must contain an 'id' column", lineno)
        present = [style for style in _COORD_STYLES if all(c in columns for c in style)]
        partial = [
            style
            for style in _COORD_STYLES
            if any(c in columns for c in style) and not all(c in columns for c in style)
        ]
        if len(present) != 1 or partial:
            raise ParseError(
                "dump must contain exactly one complete coordinate style: "
                "x y z or xs ys zs", lineno,
            )
        scaled = present[0] == ("xs", "ys", "zs")
        idx = {c: i for i, c in enumerate(columns)}

        ids = np.empty(n_atoms, dtype=np.int64)
        coords = np.empty((n_atoms, 3))
        for row in range(n_atoms):
            line, lineno = cursor.next(f"atom row {row + 1} of {n_atoms}")
            if line.strip().startswith("ITEM:"):
                raise ParseError(
                    f"expected {n_atoms} atom rows, found only {row}", lineno
                )
            parts = line.split()
            if len(parts) != len(columns):
                raise ParseError(
                    f"expected {len(columns)} columns, got {len(parts)}", lineno
                )
            try:
                ids[row] = int(parts[idx["id"]])
                for d, c in enumerate(present[0]):
                    coords[row, d] = float(parts[idx[c]])
            except ValueError as err:
                raise ParseError(f"bad atom row: {err}", lineno) from None

        if len(set(ids.tolist())) != n_atoms:
            raise ParseError("duplicate atom ids in snapshot", lineno)
        order = np.argsort(ids, kind="stable")
        coords = coords[order]
        if scaled:
            coords = coords * (bounds[:, 1] - bounds[:, 0])
        else:
            coords = coords - bounds[:, 0]
        frames.append(
            Conformation(
                coordinates=wrap_within(coords, box),
                box=box,
                source="lammps-dump",
                timestep=timestep,
            )
        )
    if not frames:
        raise ParseError("no snapshots found", 1)
    return frames


def read_lammps_dump(path: Union[str, os.PathLike]) -> list[Conformation]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_lammps_dump(fh.read())


def format_lammps_dump(
    conf: Conformation,
    timestep: Optional[int] = None,
    scaled: bool = False,
    precision: int = 9,
) -> str:
    """Format one conformation as an atom-style dump snapshot.

    Writes ``id type x y z`` (or scaled ``xs ys zs``) rows at the given
    print precision, ids 1..N.
    """
    coords = conf.coordinates
    box = conf.box
    step = timestep if timestep is not None else (conf.timestep or 0)
    out = [
        "ITEM: TIMESTEP",
        str(int(step)),
        "ITEM: NUMBER OF ATOMS",
        str(conf.n_particles),
        "ITEM: BOX BOUNDS pp pp pp",
    ]
    for d in range(3):
        out.append(f"{0.0:.{precision}e} {box.lengths[d]:.{precision}e}")
    style = ("xs", "ys", "zs") if scaled else ("x", "y", "z")
    out.append("ITEM: ATOMS id type " + " ".join(style))
    values = coords / box.lengths if scaled else coords
    for i in range(conf.n_particles):
        row = " ".join(f"{values[i, d]:.{precision}g}" for d in range(3))
        out.append(f"{i + 1} 1 {row}")
    return "\n".join(out) + "\n"


def write_lammps_dump(
    path: Union[str, os.PathLike],
    conformations: Union[Conformation, Sequence[Conformation]],
    scaled: bool = False,
    precision: int = 9,
) -> None:
    if isinstance(conformations, Conformation):
        conformations = [conformations]
    with open(path, "w", encoding="utf-8") as fh:
        for conf in conformations:
            fh.write(format_lammps_dump(conf, scaled=scaled, precision=precision))


# ---------------------------------------------------------------------------
# LAMMPS pair table

TABLE_KEYWORD = "OPP"


def format_table_file(
    table: PotentialTable,
    keyword: str = TABLE_KEYWORD,
    comment: Optional[str] = None,
) -> str:
    """Serialize a potential table in LAMMPS pair_style table format.

    Layout: a comment header, the section keyword, ``N <rows>``, a blank
    line, then 1-indexed rows ``index r energy force`` at %.15g.
    """
    header = comment or (
        f"# pair table, k={table.params.k:.15g} phi={table.params.phi:.15g}"
    )
    if not header.startswith("#"):
        header = "# " + header
    lines = [header, "", keyword, f"N {table.n_points}", ""]
    for i in range(table.n_points):
        lines.append(
            f"{i + 1} {table.r[i]:.15g} {table.energy[i]:.15g} {table.force[i]:.15g}"
        )
    return "\n".join(lines) + "\n"


def write_table_file(
    path: Union[str, os.PathLike],
    table: PotentialTable,
    keyword: str = TABLE_KEYWORD,
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_table_file(table, keyword=keyword))


def parse_table_file(text: str) -> tuple[str, NDArray, NDArray, NDArray]:
    """Read back a pair table: (keyword, r, energy, force).

    Tolerates comments and blank lines.  Raises ``ParseError`` on a missing
    keyword or count, short tables, or malformed rows.
    """
    lines = text.splitlines()
    i = 0

    def next_content() -> tuple[str, int]:
        nonlocal i
        while i < len(lines):
            line = lines[i]
            i += 1
            stripped = line.strip()
            if stripped and not stripped.startswith("#"):
                return stripped, i
        raise ParseError("truncated table file", len(lines))

    keyword, lineno = next_content()
    if len(keyword.split()) != 1:
        raise ParseError("expected a single-word section keyword", lineno)
    count_line, lineno = next_content()
    parts = count_line.split()
    if len(parts) < 2 or parts[0] != "N":
        raise ParseError("expected 'N <count>' after the keyword", lineno)
    try:
        n_rows = int(parts[1])
    except ValueError:
        raise ParseError("row count must be an integer", lineno) from None
    if n_rows < 2:
        raise ParseError("table needs at least two rows", lineno)
    r = np.empty(n_rows)
    energy = np.empty(n_rows)
    force = np.empty(n_rows)
    for row in range(n_rows):
        line, lineno = next_content()
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(f"expected 'index r energy force', got {line!r}", lineno)
        try:
            index = int(parts[0])
            r[row], energy[row], force[row] = (float(p) for p in parts[1:])
        except ValueError as err:
            raise ParseError(f"bad table row: {err}", lineno) from None
        if index != row + 1:
            raise ParseError(f"row index must be {row + 1}, got {index}", lineno)
    if np.any(np.diff(r) <= 0.0):
        raise ParseError("table separations must be strictly increasing", lineno)
    return keyword, r, energy, force


def read_table_file(path: Union[str, os.PathLike]) -> tuple[str, NDArray, NDArray, NDArray]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_table_file(fh.read())


# ---------------------------------------------------------------------------
# LAMMPS input script

_SCRIPT_TEMPLATE = """units lj
atom_style atomic
dimension 3
boundary p p p

region box block 0 {side} 0 {side} 0 {side}
create_box 1 box

lattice sc {lattice}
create_atoms 1 box

pair_style table linear {n_table}
pair_coeff 1 1 {table_file} {keyword}

mass 1 1.0

velocity all create {t_init} {velocity_seed} dist gaussian
displace_atoms all random 0.1 0.1 0.1 {velocity_seed}

neighbor 0.3 bin
neigh_modify delay 0 every 1 check yes

# Nose-Hoover Thermostat for NVT
fix 1 all nvt temp {t_init} {t_target} $(100.0*dt)

timestep 0.005
thermo 100
thermo_style custom step temp pe ke etotal

run {num_steps}
dump 1 all atom {dump_every} {dump_file}
run {num_steps}
"""


def format_lammps_script(
    temperature: float,
    num_steps: int = 20000,
    dump_every: int = 100,
    dump_file: str = "dump.lammpstrj",
    table_file: str = "pair.table",
    keyword: str = TABLE_KEYWORD,
    n_table: int = 1000,
    box_side: float = 10.0,
    lattice_density: float = 1.0,
    velocity_seed: int = 12345,
) -> str:
    """Generate an annealing input script for an external MD engine.

    The run starts at ten times the magnitude of the target temperature and
    ramps down to it, matching the reference engine's protocol.  Output is
    byte-stable for equal inputs.
    """
    if num_steps < 1 or dump_every < 1:
        raise ValueError("step counts must be positive")
    if temperature == 0.0:
        raise ValueError("target temperature must be nonzero")
    return _SCRIPT_TEMPLATE.format(
        side=f"{box_side:.15g}",
        lattice=f"{lattice_density:.15g}",
        n_table=n_table,
        table_file=table_file,
        keyword=keyword,
        t_init=f"{10.0 * abs(temperature):.15g}",
        t_target=f"{temperature:.15g}",
        velocity_seed=velocity_seed,
        num_steps=num_steps,
        dump_every=dump_every,
        dump_file=dump_file,
    )


# ---------------------------------------------------------------------------
# Native conformation and dataset formats

def _conformation_arrays(conf: Conformation) -> dict:
    return {
        "format": np.array(FORMAT_CONFORMATION),
        "version": np.array(FORMAT_VERSION),
        "coordinates": conf.coordinates,
        "box_lengths": conf.box.lengths,
        "has_condition": np.array(conf.condition is not None),
        "condition": np.array(conf.condition if conf.condition is not None else (0.0, 0.0, 0.0)),
        "source": np.array(conf.source),
        "has_seed": np.array(conf.seed is not None),
        "seed": np.array(conf.seed if conf.seed is not None else 0, dtype=np.int64),
        "has_timestep": np.array(conf.timestep is not None),
        "timestep": np.array(conf.timestep if conf.timestep is not None else 0, dtype=np.int64),
    }


def save_conformation(path: Union[str, os.PathLike], conf: Conformation) -> None:
    """Write one conformation as .npz; exact float64 round trip."""
    np.savez(path, **_conformation_arrays(conf))


def load_conformation(path: Union[str, os.PathLike]) -> Conformation:
    """Load a native conformation; validates format, version, invariants."""
    with np.load(path, allow_pickle=False) as data:
        if "format" not in data or str(data["format"]) != FORMAT_CONFORMATION:
            raise ParseError(f"{path}: not a conformation file")
        version = int(data["version"])
        if version != FORMAT_VERSION:
            raise ParseError(f"{path}: unsupported format version {version}")
        condition = tuple(float(c) for c in data["condition"]) if bool(data["has_condition"]) else None
        return Conformation(
            coordinates=np.asarray(data["coordinates"], dtype=np.float64),
            box=PeriodicBox(np.asarray(data["box_lengths"], dtype=np.float64)),
            condition=condition,
            source=str(data["source"]),
            seed=int(data["seed"]) if bool(data["has_seed"]) else None,
            timestep=int(data["timestep"]) if bool(data["has_timestep"]) else None,
        )


@dataclass(frozen=True)
class DatasetRecord:
    """Manifest row: where a conformation lives and how to use it."""

    path: str
    condition: Optional[tuple[float, float, float]]
    split: str
    augmentation_id: int = 0

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}")
        if self.condition is not None:
            object.__setattr__(
                self, "condition", tuple(float(c) for c in self.condition)
            )


def _atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".manifest-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(
    directory: Union[str, os.PathLike],
    items: Sequence[tuple[Conformation, str, int]],
) -> list[DatasetRecord]:
    """Write conformations plus a JSON manifest into a directory.

    Args:
        directory: Target directory, created if missing.
        items: Tuples of (conformation, split, augmentation id).

    Returns:
        The manifest records, in order.  The manifest lands atomically
        (write-then-rename) after all conformation files are on disk.
    """
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    records = []
    for i, (conf, split, aug_id) in enumerate(items):
        rel = f"conf_{i:05d}.npz"
        save_conformation(os.path.join(directory, rel), conf)
        records.append(
            DatasetRecord(
                path=rel, condition=conf.condition, split=split,
                augmentation_id=int(aug_id),
            )
        )
    manifest = {
        "format": FORMAT_DATASET,
        "version": FORMAT_VERSION,
        "records": [
            {
                "path": r.path,
                "condition": list(r.condition) if r.condition is not None else None,
                "split": r.split,
                "augmentation_id": r.augmentation_id,
            }
            for r in records
        ],
    }
    _atomic_write_text(
        os.path.join(directory, "manifest.json"), json.dumps(manifest, indent=2) + "\n"
    )
    return records


def load_dataset(
    directory: Union[str, os.PathLike],
    split: Optional[str] = None,
) -> list[tuple[Conformation, DatasetRecord]]:
    """Load a dataset directory, optionally filtered by split tag."""
    directory = os.fspath(directory)
    manifest_path = os.path.join(directory, "manifest.json")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as err:
        raise ParseError(f"{manifest_path}: invalid JSON: {err}") from None
    if manifest.get("format") != FORMAT_DATASET:
        raise ParseError(f"{manifest_path}: not a dataset manifest")
    if int(manifest.get("version", -1)) != FORMAT_VERSION:
        raise ParseError(f"{manifest_path}: unsupported version")
    if split is not None and split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    seen = set()
    out = []
    for row in manifest["records"]:
        record = DatasetRecord(
            path=row["path"],
            condition=tuple(row["condition"]) if row["condition"] is not None else None,
            split=row["split"],
            augmentation_id=int(row.get("augmentation_id", 0)),
        )
        if record.path in seen:
            raise ParseError(f"{manifest_path}: duplicate path {record.path}")
        seen.add(record.path)
        if split is not None and record.split != split:
            continue
        conf = load_conformation(os.path.join(directory, record.path))
        out.append((conf, record))
    return out


# ---------------------------------------------------------------------------
# Checkpoints

def save_checkpoint(
    path: Union[str, os.PathLike],
    params: DenoiserParams,
    schedule_steps: int,
    schedule_s: float,
    metadata: Optional[dict] = None,
    loss_history: Optional[Sequence[float]] = None,
) -> None:
    """Persist trained parameters with the architecture and schedule."""
    cfg = params.config
    config_json = json.dumps(
        {
            "n_layers": cfg.n_layers,
            "hidden": cfg.hidden,
            "k_neighbors": cfg.k_neighbors,
            "conv_mlp_hidden": list(cfg.conv_mlp_hidden),
            "out_mlp_hidden": list(cfg.out_mlp_hidden),
            "residual": cfg.residual,
            "concat_global": cfg.concat_global,
            "conditional": cfg.conditional,
            "activation": cfg.activation,
            "n_dims": cfg.n_dims,
        }
    )
    np.savez(
        path,
        format=np.array(FORMAT_CHECKPOINT),
        version=np.array(FORMAT_VERSION),
        flat=params.flat,
        config=np.array(config_json),
        schedule_steps=np.array(int(schedule_steps)),
        schedule_s=np.array(float(schedule_s)),
        metadata=np.array(json.dumps(metadata or {})),
        loss_history=np.asarray(loss_history if loss_history is not None else [], dtype=np.float64),
    )


def load_checkpoint(
    path: Union[str, os.PathLike],
) -> tuple[DenoiserParams, int, float, dict, NDArray]:
    """Load a checkpoint: (params, schedule_steps, schedule_s, metadata, loss_history)."""
    with np.load(path, allow_pickle=False) as data:
        if "format" not in data or str(data["format"]) != FORMAT_CHECKPOINT:
            raise ParseError(f"{path}: not a checkpoint file")
        if int(data["version"]) != FORMAT_VERSION:
            raise ParseError(f"{path}: unsupported checkpoint version")
        raw = json.loads(str(data["config"]))
        cfg = DenoiserConfig(
            n_layers=raw["n_layers"],
            hidden=raw["hidden"],
            k_neighbors=raw["k_neighbors"],
            conv_mlp_hidden=tuple(raw["conv_mlp_hidden"]),
            out_mlp_hidden=tuple(raw["out_mlp_hidden"]),
            residual=raw["residual"],
            concat_global=raw["concat_global"],
            conditional=raw["conditional"],
            activation=raw["activation"],
            n_dims=raw["n_dims"],
        )
        params = DenoiserParams(cfg, np.asarray(data["flat"]))
        return (
            params,
            int(data["schedule_steps"]),
            float(data["schedule_s"]),
            json.loads(str(data["metadata"])),
            np.asarray(data["loss_history"], dtype=np.float64),
        )


# ---------------------------------------------------------------------------
# Small CSV emitters

def write_loss_csv(path: Union[str, os.PathLike], history: Sequence[float]) -> None:
    """One (epoch, loss) row per epoch, 1-based epochs."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for epoch, loss in enumerate(history, start=1):
            fh.write(f"{epoch},{loss:.10g}\n")


def write_thermo_csv(
    path: Union[str, os.PathLike], rows: Iterable[tuple[int, float, float, float]]
) -> None:
    """MD thermodynamic log: step, temperature, potential, kinetic."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,temperature,potential_energy,kinetic_energy\n")
        for step, temp, pe, ke in rows:
            fh.write(f"{step},{temp:.10g},{pe:.10g},{ke:.10g}\n")
