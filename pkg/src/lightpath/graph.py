"""Road networks, paths, synthetic path generation, labels and file I/O.

Network file: one edge per line, ``edge_id,src_vertex,dst_vertex,length_m,base_time_s``.

Dataset file (tab separated)::

    <path_id>\t<e1> <e2> ... <eN>
    label\t<path_id>\ttt=<seconds>\trank=<score>     (either key optional)
    split\t<path_id>\t<train|val|test>
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Iterable, Mapping, Sequence

import numpy as np

MAX_WALK_RETRIES = 100
SPLITS = ("train", "val", "test")


class DatasetFormatError(ValueError):
    """Raised for malformed network or dataset files."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class WalkError(RuntimeError):
    pass


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    length: float
    base_time: float


class RoadNetwork:
    def __init__(self, edges: Mapping[int, Edge]):
        self.edges: dict[int, Edge] = {}
        for eid in sorted(edges):
            e = edges[eid]
            if eid < 0:
                raise ValueError(f"edge id must be non-negative, got {eid}")
            if not (e.length > 0 and e.base_time > 0):
                raise ValueError(f"edge {eid}: length and base time must be positive")
            self.edges[int(eid)] = e
        self.vertices: frozenset[int] = frozenset(
            v for e in self.edges.values() for v in (e.src, e.dst)
        )
        out: dict[int, list[int]] = {v: [] for v in self.vertices}
        for eid, e in self.edges.items():
            out[e.src].append(eid)
        self.out_edges: dict[int, tuple[int, ...]] = {v: tuple(ids) for v, ids in out.items()}

    @property
    def vocab_size(self) -> int:
        return max(self.edges) + 1 if self.edges else 0

    def __len__(self) -> int:
        return len(self.edges)

    def __eq__(self, other) -> bool:
        return isinstance(other, RoadNetwork) and self.edges == other.edges

    def save(self, file) -> None:
        lines = [
            f"{eid},{e.src},{e.dst},{e.length!r},{e.base_time!r}\n" for eid, e in self.edges.items()
        ]
        FsPath(file).write_text("".join(lines), encoding="ascii")

    @classmethod
    def load(cls, file) -> RoadNetwork:
        edges: dict[int, Edge] = {}
        text = FsPath(file).read_text(encoding="ascii")
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise DatasetFormatError("expected 5 comma-separated fields", lineno)
            try:
                eid, src, dst = int(parts[0]), int(parts[1]), int(parts[2])
                length, base = float(parts[3]), float(parts[4])
            except ValueError as exc:
                raise DatasetFormatError(str(exc), lineno) from None
            if eid in edges:
                raise DatasetFormatError(f"duplicate edge id {eid}", lineno)
            if not (length > 0 and base > 0 and math.isfinite(length) and math.isfinite(base)):
                raise DatasetFormatError("length and base time must be positive", lineno)
            edges[eid] = Edge(src, dst, length, base)
        return cls(edges)


@dataclass(frozen=True)
class PathViolation:
    index: int
    reason: str


def validate_path(network: RoadNetwork, edge_ids: Sequence[int]) -> PathViolation | None:
    """None when the path is valid, otherwise the first offending index."""
    if len(edge_ids) < 2:
        return PathViolation(0, "path needs at least 2 edges")
    for i, eid in enumerate(edge_ids):
        if eid not in network.edges:
            return PathViolation(i, "unknown edge")
        if i > 0:
            a, b = network.edges[edge_ids[i - 1]], network.edges[eid]
            if not {a.src, a.dst} & {b.src, b.dst}:
                return PathViolation(i, "adjacent edges share no vertex")
    return None


@dataclass
class PathRecord:
    path_id: str
    edges: tuple[int, ...]
    travel_time: float | None = None
    rank: float | None = None
    split: str | None = None

    def __post_init__(self):
        self.edges = tuple(int(e) for e in self.edges)
        if len(self.edges) < 2:
            raise ValueError(f"path {self.path_id!r} has fewer than 2 edges")
        if self.rank is not None and not 0.0 <= self.rank <= 1.0:
            raise ValueError(f"ranking score {self.rank} outside [0, 1]")
        if self.travel_time is not None and not (self.travel_time > 0 and math.isfinite(self.travel_time)):
            raise ValueError(f"travel time {self.travel_time} must be positive")
        if self.split is not None and self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")


@dataclass
class PathDataset:
    records: list[PathRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def paths(self) -> list[tuple[int, ...]]:
        return [r.edges for r in self.records]

    def subset(self, split: str) -> PathDataset:
        return PathDataset([r for r in self.records if r.split == split])

    def save(self, file) -> None:
        out = []
        for r in self.records:
            out.append(f"{r.path_id}\t{' '.join(map(str, r.edges))}\n")
        for r in self.records:
            fields = []
            if r.travel_time is not None:
                fields.append(f"tt={r.travel_time!r}")
            if r.rank is not None:
                fields.append(f"rank={r.rank!r}")
            if fields:
                out.append("label\t" + r.path_id + "\t" + "\t".join(fields) + "\n")
        for r in self.records:
            if r.split is not None:
                out.append(f"split\t{r.path_id}\t{r.split}\n")
        FsPath(file).write_text("".join(out), encoding="ascii")

    @classmethod
    def load(cls, file, network: RoadNetwork | None = None) -> PathDataset:
        return parse_dataset(FsPath(file).read_text(encoding="ascii"), network)


def parse_dataset(text: str, network: RoadNetwork | None = None) -> PathDataset:
    records: dict[str, PathRecord] = {}
    pending: list[tuple[int, list[str]]] = []
    for lineno, raw in enumerate(text.split("\n"), 1):
        if raw == "" and lineno == text.count("\n") + 1:
            break  # trailing newline
        if raw.startswith("#"):
            continue
        parts = raw.split("\t")
        if parts[0] in ("label", "split"):
            pending.append((lineno, parts))
            continue
        if len(parts) != 2 or not parts[0]:
            raise DatasetFormatError("path line must be '<id>\\t<edges>'", lineno)
        pid, body = parts
        if pid in records:
            raise DatasetFormatError(f"duplicate path id {pid!r}", lineno)
        try:
            edges = tuple(int(tok) for tok in body.split())
        except ValueError:
            raise DatasetFormatError("edge ids must be integers", lineno) from None
        if len(edges) < 2:
            raise DatasetFormatError("path must have at least 2 edges", lineno)
        if network is not None:
            bad = validate_path(network, edges)
            if bad is not None:
                raise DatasetFormatError(f"{bad.reason} at index {bad.index}", lineno)
        records[pid] = PathRecord(pid, edges)
    for lineno, parts in pending:
        if len(parts) < 3:
            raise DatasetFormatError(f"{parts[0]} line needs a path id and a value", lineno)
        pid = parts[1]
        if pid not in records:
            raise DatasetFormatError(f"{parts[0]} for unknown path {pid!r}", lineno)
        rec = records[pid]
        if parts[0] == "split":
            if len(parts) != 3 or parts[2] not in SPLITS:
                raise DatasetFormatError("bad split line", lineno)
            rec.split = parts[2]
            continue
        for item in parts[2:]:
            key, _, val = item.partition("=")
            try:
                x = float(val)
            except ValueError:
                raise DatasetFormatError(f"bad label value {item!r}", lineno) from None
            if key == "tt":
                if not (x > 0 and math.isfinite(x)):
                    raise DatasetFormatError("travel time must be positive", lineno)
                rec.travel_time = x
            elif key == "rank":
                if not 0.0 <= x <= 1.0:
                    raise DatasetFormatError(f"ranking score {x} outside [0, 1]", lineno)
                rec.rank = x
            else:
                raise DatasetFormatError(f"unknown label key {key!r}", lineno)
    return PathDataset(list(records.values()))


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def generate_grid_network(rows: int, cols: int, seed: int) -> RoadNetwork:
    """4-connected grid; each segment gets one length and a speed per direction."""
    if rows < 2 or cols < 2:
        raise ValueError("grid needs at least 2 rows and 2 columns")
    rng = np.random.default_rng(seed)
    edges: dict[int, Edge] = {}
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            for nb in ((v + 1) if c + 1 < cols else None, (v + cols) if r + 1 < rows else None):
                if nb is None:
                    continue
                length = float(rng.uniform(50.0, 500.0))
                for src, dst in ((v, nb), (nb, v)):
                    speed = float(rng.uniform(8.0, 16.0))
                    edges[len(edges)] = Edge(src, dst, length, length / speed)
    return RoadNetwork(edges)


def _reverse_of(network: RoadNetwork, eid: int, candidate: int) -> bool:
    a, b = network.edges[eid], network.edges[candidate]
    return a.src == b.dst and a.dst == b.src


def random_walk(network: RoadNetwork, start: int, length: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Follow outgoing edges from ``start``; restart at ``start`` on dead ends.

    Immediate U-turns are avoided whenever another outgoing edge exists.
    """
    for _ in range(MAX_WALK_RETRIES):
        walk: list[int] = []
        v = start
        while len(walk) < length:
            outs = network.out_edges.get(v, ())
            if walk:
                fwd = tuple(e for e in outs if not _reverse_of(network, walk[-1], e))
                outs = fwd or outs
            if not outs:
                break
            eid = outs[int(rng.integers(len(outs)))]
            walk.append(eid)
            v = network.edges[eid].dst
        if len(walk) == length:
            return tuple(walk)
    raise WalkError(f"no walk of length {length} from vertex {start} after {MAX_WALK_RETRIES} retries")


def generate_synthetic_paths(
    network: RoadNetwork, n_seeds: int, walk_length: int, repeats: int, seed: int
) -> PathDataset:
    """``n_seeds`` random start vertices, each expanded ``repeats`` times by random walks."""
    if walk_length < 2:
        raise ValueError("walk_length must be >= 2")
    if n_seeds < 1 or repeats < 1:
        raise ValueError("n_seeds and repeats must be >= 1")
    rng = np.random.default_rng(seed)
    vertices = np.array(sorted(network.vertices))
    starts = rng.choice(vertices, size=n_seeds, replace=n_seeds > len(vertices))
    records = []
    for rep in range(repeats):
        for s in starts:
            walk = random_walk(network, int(s), walk_length, rng)
            records.append(PathRecord(f"p{len(records)}", walk))
    return PathDataset(records)


def synth_travel_time(
    network: RoadNetwork, path: Sequence[int], noise_seed: int | Sequence[int] | None = None, sigma: float = 0.2
) -> float:
    """Sum of base times, each scaled by a lognormal congestion factor.

    ``noise_seed=None`` gives the noise-free sum.
    """
    base = [network.edges[e].base_time for e in path]
    if noise_seed is None:
        return math.fsum(base)
    factors = np.random.default_rng(noise_seed).lognormal(0.0, sigma, size=len(base))
    return math.fsum(b * float(f) for b, f in zip(base, factors))


def label_travel_times(network: RoadNetwork, dataset: PathDataset, seed: int, sigma: float = 0.2) -> None:
    for i, rec in enumerate(dataset.records):
        rec.travel_time = synth_travel_time(network, rec.edges, (seed, i), sigma)


def assign_splits(dataset: PathDataset, seed: int, test_fraction: float = 0.2, val_fraction: float = 0.0) -> None:
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_test = int(round(test_fraction * n))
    n_val = int(round(val_fraction * n))
    for rank, idx in enumerate(order):
        split = "test" if rank < n_test else "val" if rank < n_test + n_val else "train"
        dataset.records[int(idx)].split = split


# ---------------------------------------------------------------------------
# ranking labels
# ---------------------------------------------------------------------------


def jaccard(a: Iterable[int], b: Iterable[int]) -> float:
    sa, sb = set(a), set(b)
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def _dijkstra(network: RoadNetwork, weights: dict[int, float], origin: int, dest: int) -> tuple[int, ...] | None:
    dist = {origin: 0.0}
    prev: dict[int, int] = {}
    heap = [(0.0, origin)]
    done = set()
    while heap:
        d, v = heapq.heappop(heap)
        if v in done:
            continue
        done.add(v)
        if v == dest:
            break
        for eid in network.out_edges.get(v, ()):
            u = network.edges[eid].dst
            nd = d + weights[eid]
            if nd < dist.get(u, math.inf):
                dist[u] = nd
                prev[u] = eid
                heapq.heappush(heap, (nd, u))
    if dest not in done:
        return None
    path = []
    v = dest
    while v != origin:
        eid = prev[v]
        path.append(eid)
        v = network.edges[eid].src
    return tuple(reversed(path))


def ranking_candidates(
    network: RoadNetwork,
    trajectory: Sequence[int],
    k: int,
    seed: int,
    max_attempts: int | None = None,
) -> list[tuple[tuple[int, ...], float]]:
    """Trajectory (score 1.0) plus up to ``k`` alternative routes with Jaccard scores.

    Alternatives come from shortest-path searches under randomly perturbed
    edge lengths, with the trajectory's own edges penalised to encourage
    diversity.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    trajectory = tuple(int(e) for e in trajectory)
    origin = network.edges[trajectory[0]].src
    dest = network.edges[trajectory[-1]].dst
    rng = np.random.default_rng(seed)
    on_traj = set(trajectory)
    ids = list(network.edges)
    lengths = np.array([network.edges[e].length for e in ids])
    found: list[tuple[int, ...]] = []
    attempts = max_attempts if max_attempts is not None else 20 * k
    for _ in range(attempts):
        noise = rng.lognormal(0.0, 0.5, size=len(ids))
        penalty = 1.0 + rng.uniform(0.0, 2.0)
        w = {e: float(l * f) * (penalty if e in on_traj else 1.0) for e, l, f in zip(ids, lengths, noise)}
        alt = _dijkstra(network, w, origin, dest)
        if alt is None or len(alt) < 2 or alt == trajectory or alt in found:
            continue
        found.append(alt)
        if len(found) == k:
            break
    if not found:
        raise WalkError("no alternative route found")
    return [(trajectory, 1.0)] + [(alt, jaccard(alt, trajectory)) for alt in found]


def ranking_dataset(
    network: RoadNetwork, trajectories: Sequence[Sequence[int]], k: int, seed: int, skip_unrankable: bool = False
) -> PathDataset:
    """One candidate group per trajectory, each path labelled with its ranking score.

    With ``skip_unrankable`` trajectories without any alternative route (for
    example loops back to their origin) are dropped instead of raising.
    """
    records = []
    for g, traj in enumerate(trajectories):
        try:
            group = ranking_candidates(network, traj, k, seed=(seed * 1_000_003 + g))
        except WalkError:
            if skip_unrankable:
                continue
            raise
        for j, (path, score) in enumerate(group):
            records.append(PathRecord(f"g{g}_c{j}", path, rank=score))
    if not records:
        raise WalkError("no trajectory has an alternative route")
    return PathDataset(records)
