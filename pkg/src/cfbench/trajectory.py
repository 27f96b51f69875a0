"""Trajectory ingestion, derived kinematics, cleaning, statistics and splitting.

The unit of work is a leader/follower pair sampled at a fixed frequency.
Raw CSVs are mapped onto a canonical column set, accelerations and spacing
are derived where absent, physically implausible rows are dropped (splitting
a trajectory where the drop leaves a hole in the timebase), and the cleaned
dataset can be summarized, re-emitted, and split into train/test partitions
by trajectory id.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, EmptyTrajectoryError, SchemaError, SplitError

# Canonical column names of the on-disk CSV schema. a_*, gap_m and x_* are
# optional per the schema map; gap_m or both x_* must be present.
CANONICAL_COLUMNS = (
    "traj_id",
    "time_s",
    "v_leader",
    "v_follower",
    "a_leader",
    "a_follower",
    "gap_m",
    "x_leader",
    "x_follower",
)

MANDATORY_FIELDS = ("traj_id", "time_s", "v_leader", "v_follower")

# Cleaning thresholds: bumper gap must be positive, accelerations within
# +-10 m/s^2, speeds non-negative.
ACCEL_LIMIT = 10.0
MIN_SEGMENT_LEN = 2

SCHEMA_PRESETS: dict[str, dict[str, str]] = {
    "canonical": {name: name for name in CANONICAL_COLUMNS},
    # Unified longitudinal-trajectory layout used by cleaned OpenACC exports.
    "ultra-av": {
        "traj_id": "Trajectory_ID",
        "time_s": "Time_Index",
        "v_leader": "Speed_LV",
        "v_follower": "Speed_FAV",
        "a_leader": "Acc_LV",
        "a_follower": "Acc_FAV",
        "gap_m": "Space_Gap",
        "x_leader": "Pos_LV",
        "x_follower": "Pos_FAV",
    },
}


@dataclass(frozen=True)
class Sample:
    """One synchronous observation of the leader/follower pair (SI units)."""

    t: float
    v_l: float
    v_f: float
    a_l: float
    a_f: float
    gap: float
    dv: float


@dataclass
class Trajectory:
    """A fixed-frequency car-following episode.

    Mandatory arrays are time and the two speeds; accelerations, gap, speed
    difference and absolute positions may be absent until
    :func:`derive_kinematics` fills them in. All arrays share one length and
    the timestamps increase strictly with constant step ``1/hz``.
    """

    id: str
    hz: float
    t: np.ndarray
    v_l: np.ndarray
    v_f: np.ndarray
    a_l: np.ndarray | None = None
    a_f: np.ndarray | None = None
    gap: np.ndarray | None = None
    dv: np.ndarray | None = None
    x_l: np.ndarray | None = None
    x_f: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.t)

    @property
    def dt(self) -> float:
        return 1.0 / self.hz

    @property
    def is_derived(self) -> bool:
        return all(arr is not None for arr in (self.a_l, self.a_f, self.gap, self.dv))

    @property
    def samples(self) -> list[Sample]:
        if not self.is_derived:
            raise DataError(f"trajectory {self.id}: kinematics not derived yet")
        return [
            Sample(*vals)
            for vals in zip(self.t, self.v_l, self.v_f, self.a_l, self.a_f, self.gap, self.dv)
        ]

    def slice(self, start: int, stop: int) -> "Trajectory":
        """Contiguous sub-trajectory on the same timebase."""

        def cut(arr):
            return None if arr is None else arr[start:stop]

        return Trajectory(
            id=self.id,
            hz=self.hz,
            t=self.t[start:stop],
            v_l=self.v_l[start:stop],
            v_f=self.v_f[start:stop],
            a_l=cut(self.a_l),
            a_f=cut(self.a_f),
            gap=cut(self.gap),
            dv=cut(self.dv),
            x_l=cut(self.x_l),
            x_f=cut(self.x_f),
        )


@dataclass(frozen=True)
class VariableStats:
    mean: float
    std: float
    min: float
    max: float


@dataclass
class DatasetSummary:
    """Pooled per-variable statistics over every sample of a dataset."""

    variables: dict[str, VariableStats]
    n_records: int
    n_trajectories: int

    def rows(self) -> list[tuple[str, float, float, float, float]]:
        return [(k, v.mean, v.std, v.min, v.max) for k, v in self.variables.items()]


@dataclass(frozen=True)
class SplitSpec:
    """Train/test split over whole trajectories in id order."""

    train_fraction: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise SplitError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


def resolve_schema(schema: Mapping[str, str] | str) -> dict[str, str]:
    if isinstance(schema, str):
        try:
            return dict(SCHEMA_PRESETS[schema])
        except KeyError:
            raise SchemaError(
                f"unknown schema preset {schema!r}; available: {sorted(SCHEMA_PRESETS)}"
            ) from None
    return {k: v for k, v in schema.items() if v}


def _open_source(source) -> IO[str]:
    if hasattr(source, "read"):
        data = source.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        return io.StringIO(data)
    return open(source, "r", encoding="utf-8", newline="")


def ingest_csv(source, schema: Mapping[str, str] | str = "canonical") -> list[Trajectory]:
    """Read a raw trajectory CSV into one Trajectory per distinct id.

    ``schema`` maps canonical field names to the file's column names (or
    names a preset). time, both speeds and either gap or both positions are
    mandatory; anything else is left for :func:`derive_kinematics`.
    Timestamps within an id must increase strictly in file order.
    """
    colmap = resolve_schema(schema)
    missing_spec = [f for f in MANDATORY_FIELDS if f not in colmap]
    if missing_spec:
        raise SchemaError(f"schema map lacks mandatory fields: {missing_spec}")
    if "gap_m" not in colmap and not ("x_leader" in colmap and "x_follower" in colmap):
        raise SchemaError("schema map must provide gap_m or both x_leader and x_follower")

    fh = _open_source(source)
    try:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        if reader.fieldnames is None:
            raise SchemaError("CSV has no header row")
        header = set(reader.fieldnames)
        absent = {f: c for f, c in colmap.items() if c not in header}
        for f in MANDATORY_FIELDS:
            if f in absent:
                raise SchemaError(f"column {colmap[f]!r} (field {f!r}) not in CSV header")
        if "gap_m" in absent and ("x_leader" in absent or "x_follower" in absent):
            raise SchemaError("CSV provides neither gap column nor both position columns")
        present = {f: c for f, c in colmap.items() if c in header}

        by_id: dict[str, dict[str, list[float]]] = {}
        order: list[str] = []
        for rownum, row in enumerate(reader, start=2):  # header is line 1
            tid = row[present["traj_id"]].strip()
            if tid not in by_id:
                by_id[tid] = {f: [] for f in present if f != "traj_id"}
                order.append(tid)
            cols = by_id[tid]
            try:
                for f in cols:
                    cols[f].append(float(row[present[f]]))
            except (TypeError, ValueError) as exc:
                raise DataError(f"row {rownum}: non-numeric value ({exc})") from None
            ts = cols["time_s"]
            if len(ts) >= 2 and ts[-1] <= ts[-2]:
                raise DataError(
                    f"row {rownum}: non-monotone timestamp {ts[-1]} for trajectory {tid}"
                )
    finally:
        fh.close()

    trajectories = []
    for tid in order:
        cols = by_id[tid]
        t = np.asarray(cols["time_s"], dtype=float)
        if len(t) < MIN_SEGMENT_LEN:
            raise DataError(f"trajectory {tid}: fewer than {MIN_SEGMENT_LEN} samples")
        hz = _infer_frequency(tid, t)

        def arr(f):
            return np.asarray(cols[f], dtype=float) if f in cols else None

        trajectories.append(
            Trajectory(
                id=tid,
                hz=hz,
                t=t,
                v_l=arr("v_leader"),
                v_f=arr("v_follower"),
                a_l=arr("a_leader"),
                a_f=arr("a_follower"),
                gap=arr("gap_m"),
                x_l=arr("x_leader"),
                x_f=arr("x_follower"),
            )
        )
    return trajectories


def _infer_frequency(tid: str, t: np.ndarray) -> float:
    steps = np.diff(t)
    dt = float(np.median(steps))
    if dt <= 0:
        raise DataError(f"trajectory {tid}: non-positive sampling step")
    if np.max(np.abs(steps - dt)) > 1e-6 * max(1.0, dt):
        k = int(np.argmax(np.abs(steps - dt)))
        raise DataError(
            f"trajectory {tid}: irregular sampling step at sample {k + 1} "
            f"({steps[k]:.6g}s vs {dt:.6g}s)"
        )
    hz = 1.0 / dt
    if abs(hz - round(hz)) < 1e-6:
        hz = float(round(hz))
    return hz


def finite_difference(values: np.ndarray, dt: float) -> np.ndarray:
    """Central differences inside, one-sided at the ends."""
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        raise DataError("need at least 2 samples to differentiate")
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * dt)
    out[0] = (v[1] - v[0]) / dt
    out[-1] = (v[-1] - v[-2]) / dt
    return out


def derive_kinematics(
    traj: Trajectory, vehicle_lengths: tuple[float, float] = (5.0, 5.0)
) -> list[Trajectory]:
    """Fill in accelerations, gap and speed difference, then clean.

    Accelerations come from finite differences of the speeds when the file
    did not provide them; the gap from positions minus the leader length when
    only positions were given; dv is always v_f - v_l (positive when
    closing). Rows with gap <= 0, negative speed or |a| > 10 m/s^2 are
    dropped and the trajectory is split wherever dropping leaves a hole, so
    every returned segment keeps a constant sampling step. Returns the list
    of surviving segments (the spec-level operation; splitting makes the
    result plural).
    """
    dt = traj.dt
    a_l = traj.a_l if traj.a_l is not None else finite_difference(traj.v_l, dt)
    a_f = traj.a_f if traj.a_f is not None else finite_difference(traj.v_f, dt)
    if traj.gap is not None:
        gap = traj.gap
    elif traj.x_l is not None and traj.x_f is not None:
        gap = traj.x_l - traj.x_f - vehicle_lengths[0]
    else:
        raise DataError(f"trajectory {traj.id}: neither gap nor positions available")
    dv = traj.v_f - traj.v_l

    keep = (
        (gap > 0.0)
        & (traj.v_l >= 0.0)
        & (traj.v_f >= 0.0)
        & (np.abs(a_l) <= ACCEL_LIMIT)
        & (np.abs(a_f) <= ACCEL_LIMIT)
    )
    derived = Trajectory(
        id=traj.id, hz=traj.hz, t=traj.t, v_l=traj.v_l, v_f=traj.v_f,
        a_l=a_l, a_f=a_f, gap=gap, dv=dv, x_l=traj.x_l, x_f=traj.x_f,
    )
    segments = []
    for start, stop in _contiguous_runs(keep):
        if stop - start >= MIN_SEGMENT_LEN:
            segments.append(derived.slice(start, stop))
    if not segments:
        raise EmptyTrajectoryError(f"trajectory {traj.id}: cleaning removed every sample")
    if len(segments) > 1:
        for k, seg in enumerate(segments):
            seg.id = f"{traj.id}#{k}"
    return segments


def _contiguous_runs(mask: np.ndarray) -> Iterable[tuple[int, int]]:
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([0], breaks + 1))
    stops = np.concatenate((breaks + 1, [len(idx)]))
    return [(int(idx[a]), int(idx[b - 1]) + 1) for a, b in zip(starts, stops)]


def derive_dataset(
    dataset: Sequence[Trajectory], vehicle_lengths: tuple[float, float] = (5.0, 5.0)
) -> list[Trajectory]:
    """derive_kinematics over a whole dataset, flattening split segments."""
    out: list[Trajectory] = []
    for traj in dataset:
        try:
            out.extend(derive_kinematics(traj, vehicle_lengths))
        except EmptyTrajectoryError:
            continue
    if not out:
        raise EmptyTrajectoryError("cleaning removed every trajectory")
    return out


SUMMARY_VARIABLES = ("v_l", "a_l", "v_f", "a_f", "gap")


def summarize(dataset: Sequence[Trajectory]) -> DatasetSummary:
    """Pooled mean/std/min/max per kinematic variable (population std)."""
    if not dataset:
        raise DataError("cannot summarize an empty dataset")
    variables = {}
    for name in SUMMARY_VARIABLES:
        pooled = np.concatenate([getattr(tr, name) for tr in dataset])
        variables[name] = VariableStats(
            mean=float(np.mean(pooled)),
            std=float(np.std(pooled)),
            min=float(np.min(pooled)),
            max=float(np.max(pooled)),
        )
    n_records = sum(len(tr) for tr in dataset)
    return DatasetSummary(variables=variables, n_records=n_records, n_trajectories=len(dataset))


def _id_sort_key(tid: str):
    # segment ids from cleaning splits ("3#1") sort with their parent id
    head, _, tail = tid.partition("#")
    try:
        segment = int(tail) if tail else -1
    except ValueError:
        segment = -1
    try:
        return (0, float(head), segment, tid)
    except ValueError:
        return (1, 0.0, segment, tid)


def split_dataset(
    dataset: Sequence[Trajectory], spec: SplitSpec = SplitSpec()
) -> tuple[list[Trajectory], list[Trajectory]]:
    """First ceil(n * fraction) trajectories in id order train, rest test."""
    n = len(dataset)
    if n < 2:
        raise SplitError("need at least 2 trajectories to split")
    ordered = sorted(dataset, key=lambda tr: _id_sort_key(tr.id))
    n_train = math.ceil(n * spec.train_fraction)
    train, test = list(ordered[:n_train]), list(ordered[n_train:])
    if not train or not test:
        raise SplitError(
            f"fraction {spec.train_fraction} leaves an empty partition for {n} trajectories"
        )
    return train, test


def emit_csv(dataset: Sequence[Trajectory], sink) -> None:
    """Write the dataset back out in the canonical schema at full precision.

    Floats are rendered with repr so a re-ingest reproduces the arrays
    bit-for-bit (round-trip property).
    """
    own = not hasattr(sink, "write")
    fh = open(sink, "w", encoding="utf-8", newline="") if own else sink
    try:
        has_x = all(tr.x_l is not None and tr.x_f is not None for tr in dataset)
        cols = [c for c in CANONICAL_COLUMNS if has_x or not c.startswith("x_")]
        writer = csv.writer(fh)
        writer.writerow(cols)
        for tr in dataset:
            if not tr.is_derived:
                raise DataError(f"trajectory {tr.id}: derive kinematics before emitting")
            arrays = [tr.t, tr.v_l, tr.v_f, tr.a_l, tr.a_f, tr.gap]
            if has_x:
                arrays += [tr.x_l, tr.x_f]
            for row in zip(*arrays):
                writer.writerow([tr.id] + [repr(float(x)) for x in row])
    finally:
        if own:
            fh.close()
