"""Corpus ingestion, ground-truth simulation and file persistence.

A corpus on disk is a CSV in the ingestion schema
(``user_id,timestamp,lat,lon``) plus a ``<name>.meta.json`` sidecar that
carries the grid spec and sampling period, so downstream consumers can
verify compatibility without re-deriving anything.
"""

from __future__ import annotations

import base64
import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import geogrid
from .errors import (DomainError, FormatVersionError, IncompatibilityError,
                     InsufficientDataError, ParseError)
from .geogrid import GridSpec, LatLon

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
CSV_HEADER = ["user_id", "timestamp", "lat", "lon"]

SECONDS_PER_DAY = 86400


@dataclass
class GridTrace:
    """One user's trajectory: parallel cell and timestamp arrays."""

    user_id: str
    cells: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.int64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        if self.cells.size == 0:
            raise DomainError("trace must be non-empty")
        if self.cells.shape != self.timestamps.shape:
            raise DomainError("cells and timestamps must have equal length")
        if self.timestamps.size > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise DomainError(f"trace {self.user_id}: timestamps must strictly increase")

    def __len__(self):
        return self.cells.size


@dataclass
class Corpus:
    spec: GridSpec
    traces: list[GridTrace] = field(default_factory=list)
    sampling_period: int = 600

    def __len__(self):
        return len(self.traces)

    def n_points(self) -> int:
        return int(sum(len(t) for t in self.traces))


def hour_of_day(timestamps) -> np.ndarray:
    """Fractional hour in [0, 24) for epoch-second timestamps."""
    return (np.asarray(timestamps) % SECONDS_PER_DAY) / 3600.0


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def ingest(csv_source, spec: GridSpec, sampling_period: int) -> Corpus:
    """Read raw points, grid-project and regularize onto a uniform time step.

    Per user: rows are sorted by time, duplicate timestamps collapse to the
    last row, and gaps are filled by previous-observation carry-forward.
    Out-of-bounds points are dropped and counted; users left with fewer than
    two points are dropped with a warning.
    """
    if sampling_period <= 0:
        raise DomainError(f"sampling_period must be positive, got {sampling_period}")
    close = False
    if isinstance(csv_source, (str, os.PathLike)):
        fh = open(csv_source, "r", encoding="utf-8", newline="")
        close = True
    else:
        fh = csv_source
    try:
        per_user = _parse_rows(fh, spec)
    finally:
        if close:
            fh.close()

    traces = []
    n_short = 0
    for user_id, rows in per_user.items():
        rows.sort(key=lambda r: r[0])
        dedup = {}
        for ts, cell in rows:
            dedup[ts] = cell  # keep last
        ts = np.fromiter(dedup.keys(), dtype=np.int64)
        cells = np.fromiter(dedup.values(), dtype=np.int64)
        order = np.argsort(ts)
        ts, cells = ts[order], cells[order]
        if ts.size < 2:
            n_short += 1
            continue
        grid_ts = np.arange(ts[0], ts[-1] + 1, sampling_period, dtype=np.int64)
        idx = np.searchsorted(ts, grid_ts, side="right") - 1
        traces.append(GridTrace(user_id, cells[idx], grid_ts))
    if n_short:
        logger.warning("dropped %d user(s) with fewer than 2 surviving points", n_short)
    return Corpus(spec=spec, traces=traces, sampling_period=int(sampling_period))


def _parse_rows(fh, spec: GridSpec):
    reader = csv.reader(fh)
    per_user: dict[str, list] = {}
    n_oob = 0
    for lineno, row in enumerate(reader, start=1):
        if lineno == 1 and row and row[0].strip().lower() == "user_id":
            continue
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) < 4:
            raise ParseError(f"expected 4 columns, got {len(row)}", line=lineno)
        user_id = row[0].strip()
        try:
            ts = int(row[1])
            lat = float(row[2])
            lon = float(row[3])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from exc
        if ts < 0:
            raise ParseError(f"negative timestamp {ts}", line=lineno)
        if not (spec.lat_min <= lat <= spec.lat_max and spec.lon_min <= lon <= spec.lon_max):
            n_oob += 1
            continue
        cell = geogrid.encode(spec, LatLon(lat, lon))
        per_user.setdefault(user_id, []).append((ts, cell))
    if n_oob:
        logger.warning("dropped %d point(s) outside the grid bounding box", n_oob)
    return per_user


# ---------------------------------------------------------------------------
# ground-truth simulator
# ---------------------------------------------------------------------------

@dataclass
class SimulatorParams:
    stay_at_anchor: float = 0.9
    stay_elsewhere: float = 0.4
    pull_to_anchor: float = 0.8
    popularity_exponent: float = 1.0


class GroundTruthSimulator:
    """Seeded time-inhomogeneous Markov mobility model over hotspot cells.

    Each user has a home and a work hotspot drawn from a Zipf popularity
    law.  Hours 20-08 pull toward home, 09-17 toward work, the rest toward
    the upcoming anchor with extra noise.  The per-user transition matrix
    at any hour is exposed for oracle tests.
    """

    def __init__(self, spec: GridSpec, n_users: int, n_hotspots: int, seed: int,
                 population_seed=None, params: SimulatorParams | None = None):
        if n_hotspots < 2:
            raise DomainError(f"need at least 2 hotspots, got {n_hotspots}")
        if n_hotspots > spec.n_cells:
            raise DomainError("more hotspots than grid cells")
        self.spec = spec
        self.params = params or SimulatorParams()
        pop_rng = np.random.default_rng(seed if population_seed is None else population_seed)
        self.hotspots = np.sort(pop_rng.choice(spec.n_cells, size=n_hotspots, replace=False))
        weights = 1.0 / np.arange(1, n_hotspots + 1) ** self.params.popularity_exponent
        pop_rng.shuffle(weights)
        self.popularity = weights / weights.sum()
        self._pop_cdf = np.cumsum(self.popularity)

        # anchors belong to the population: the same population_seed yields
        # the same users, so disjoint trajectory draws stay comparable
        m = n_hotspots
        self.homes = np.array([self._draw_pop(pop_rng) for _ in range(n_users)])
        self.works = np.empty(n_users, dtype=np.int64)
        for i in range(n_users):
            w = self._draw_pop(pop_rng)
            while w == self.homes[i] and m > 1:
                w = self._draw_pop(pop_rng)
            self.works[i] = w
        self.n_users = n_users
        self.n_hotspots = m

        self.rng = np.random.default_rng(seed)

    def _draw_pop(self, rng) -> int:
        return int(np.searchsorted(self._pop_cdf, rng.uniform()))

    def anchor(self, user: int, hour: float) -> int:
        h = hour % 24
        if h >= 20 or h < 8:
            return int(self.homes[user])
        if 9 <= h < 17:
            return int(self.works[user])
        # transit: heading to work in the morning, home in the evening
        return int(self.works[user]) if h < 12 else int(self.homes[user])

    def _noise_weight(self, hour: float) -> float:
        h = hour % 24
        in_regime = h >= 20 or h < 8 or 9 <= h < 17
        return 1.0 if in_regime else 3.0  # transit hours are noisier

    def transition_row(self, user: int, state: int, hour: float) -> np.ndarray:
        """Exact next-hotspot distribution from ``state`` at ``hour``."""
        p = self.params
        a = self.anchor(user, hour)
        noise = self._noise_weight(hour)
        stay = p.stay_at_anchor if state == a else p.stay_elsewhere
        stay = stay ** noise if noise > 1 else stay
        row = np.zeros(self.n_hotspots)
        rest = 1.0 - stay
        row[state] += stay
        if state != a:
            row[a] += rest * p.pull_to_anchor
            rest *= (1.0 - p.pull_to_anchor)
        row += rest * self.popularity
        return row

    def transition_matrix(self, user: int, hour: float) -> np.ndarray:
        return np.stack([self.transition_row(user, j, hour) for j in range(self.n_hotspots)])

    def stationary_distribution(self, user: int, hour: float) -> np.ndarray:
        """Leading left eigenvector of the fixed-hour transition matrix."""
        mat = self.transition_matrix(user, hour)
        vals, vecs = np.linalg.eig(mat.T)
        k = int(np.argmin(np.abs(vals - 1.0)))
        pi = np.real(vecs[:, k])
        pi = np.abs(pi)
        return pi / pi.sum()

    def simulate_chain(self, user: int, n_steps: int, hour: float, rng) -> np.ndarray:
        """Fixed-hour hotspot-index chain, for count-based oracle checks."""
        p = self.params
        a = self.anchor(user, hour)
        noise = self._noise_weight(hour)
        out = np.empty(n_steps, dtype=np.int64)
        state = a
        u = rng.uniform(size=n_steps)
        v = rng.uniform(size=n_steps)
        for i in range(n_steps):
            state = self._step(state, a, u[i], v[i], noise, p)
            out[i] = state
        return out

    def _step(self, state, a, u, v, noise, p) -> int:
        stay = p.stay_at_anchor if state == a else p.stay_elsewhere
        stay = stay ** noise if noise > 1 else stay
        if u < stay:
            return state
        rest = 1.0 - stay
        if state != a:
            if u < stay + rest * p.pull_to_anchor:
                return a
        return int(np.searchsorted(self._pop_cdf, v))

    def simulate(self, trace_len: int, sampling_period: int, start_time: int = 0) -> Corpus:
        if trace_len < 1:
            raise DomainError("trace_len must be >= 1")
        timestamps = start_time + sampling_period * np.arange(trace_len, dtype=np.int64)
        hours = hour_of_day(timestamps)
        p = self.params
        states = self.homes.copy()
        path = np.empty((self.n_users, trace_len), dtype=np.int64)
        for i in range(trace_len):
            h = hours[i]
            noise = self._noise_weight(h)
            u = self.rng.uniform(size=self.n_users)
            v = self.rng.uniform(size=self.n_users)
            for k in range(self.n_users):
                a = self.anchor(k, h)
                states[k] = self._step(states[k], a, u[k], v[k], noise, p)
            path[:, i] = states
        traces = [
            GridTrace(f"gt_{k}", self.hotspots[path[k]], timestamps)
            for k in range(self.n_users)
        ]
        return Corpus(spec=self.spec, traces=traces, sampling_period=int(sampling_period))


def simulate_ground_truth(spec: GridSpec, n_users: int, trace_len: int,
                          n_hotspots: int, seed: int, sampling_period: int = 600,
                          start_time: int = 0, population_seed=None,
                          params: SimulatorParams | None = None) -> Corpus:
    """Seeded stand-in corpus; ``population_seed`` pins the hotspot layout and
    user anchors so disjoint trajectory samples share one population."""
    sim = GroundTruthSimulator(spec, n_users, n_hotspots, seed,
                               population_seed=population_seed, params=params)
    return sim.simulate(trace_len, sampling_period, start_time=start_time)


# ---------------------------------------------------------------------------
# array <-> json helpers
# ---------------------------------------------------------------------------

def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    return {
        "dtype": str(a.dtype),
        "shape": list(a.shape),
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"]).copy()


# ---------------------------------------------------------------------------
# corpus files
# ---------------------------------------------------------------------------

def _meta_path(path) -> str:
    return f"{os.fspath(path)}.meta.json"


def save_corpus(corpus: Corpus, path) -> None:
    """CSV in the ingestion schema plus a .meta.json sidecar."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for trace in corpus.traces:
            for cell, ts in zip(trace.cells, trace.timestamps):
                lat, lon = geogrid.decode(corpus.spec, int(cell))
                writer.writerow([trace.user_id, int(ts), repr(lat), repr(lon)])
    meta = {
        "format_version": FORMAT_VERSION,
        "grid_spec": corpus.spec.to_dict(),
        "sampling_period": corpus.sampling_period,
    }
    with open(_meta_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_corpus(path, expected_spec: GridSpec | None = None) -> Corpus:
    meta_file = _meta_path(path)
    if not os.path.exists(meta_file):
        raise FileNotFoundError(meta_file)
    with open(meta_file, "r", encoding="utf-8") as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"corrupted corpus metadata: {exc}") from exc
    _check_version(meta)
    spec = GridSpec.from_dict(meta["grid_spec"])
    if expected_spec is not None and spec != expected_spec:
        raise IncompatibilityError(
            f"corpus grid spec {spec} does not match expected {expected_spec}")
    return ingest(path, spec, int(meta["sampling_period"]))


# ---------------------------------------------------------------------------
# model / report files
# ---------------------------------------------------------------------------

def save_model(model, path) -> None:
    """JSON envelope around a generator's payload (see generators module)."""
    envelope = {
        "format_version": FORMAT_VERSION,
        "model_type": model.model_type,
        "grid_spec": model.spec.to_dict(),
        "sampling_period": model.sampling_period,
        "payload": model.to_payload(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(envelope, fh, sort_keys=True)
        fh.write("\n")


def load_model(path):
    from . import generators

    with open(path, "r", encoding="utf-8") as fh:
        try:
            envelope = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"corrupted model file: {exc}") from exc
    _check_version(envelope)
    spec = GridSpec.from_dict(envelope["grid_spec"])
    return generators.generator_from_payload(
        envelope["model_type"], spec, int(envelope["sampling_period"]),
        envelope["payload"])


REPORT_BLOCKS = ("topn", "mmd", "mi_decay", "privacy")


def save_report(report: dict, path) -> None:
    if "format_version" not in report:
        report = {"format_version": FORMAT_VERSION, **report}
    missing = [b for b in REPORT_BLOCKS if b not in report]
    if missing:
        raise DomainError(f"report is missing metric blocks: {missing}")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, sort_keys=True, default=_jsonify)
        fh.write("\n")


def load_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            report = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"corrupted report file: {exc}") from exc
    _check_version(report)
    missing = [b for b in REPORT_BLOCKS if b not in report]
    if missing:
        raise ParseError(f"report is missing metric blocks: {missing}")
    return report


def _check_version(envelope: dict) -> None:
    version = envelope.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(
            f"unsupported format_version {version!r}; this build reads {FORMAT_VERSION}")


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def corpus_to_csv_string(corpus: Corpus) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CSV_HEADER)
    for trace in corpus.traces:
        for cell, ts in zip(trace.cells, trace.timestamps):
            lat, lon = geogrid.decode(corpus.spec, int(cell))
            writer.writerow([trace.user_id, int(ts), repr(lat), repr(lon)])
    return buf.getvalue()
