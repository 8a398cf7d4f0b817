"""Synthetic graphs with a planted informative subgraph, signal injection, and
CSV dataset bundles."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .graph import Graph, load_graph_json, save_graph_json

THREE_RING = "three_ring"
THREE_COMPONENT_ER = "three_component_er"
EMBEDDED_ER = "embedded_er"
KINDS = (THREE_RING, THREE_COMPONENT_ER, EMBEDDED_ER)

MAX_GRAPH_RETRIES = 10


class DatasetFormatError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    kind: str = THREE_RING
    n_nodes: int = 150
    signal_dim: int = 10
    n_samples: int = 200  # per class
    n_classes: int = 2
    noise_sigma: float = 0.3
    er_p: float = 0.15
    er_p_global: float = 0.05
    er_p_sub: float = 0.5
    sub_size: int = 30
    subject_size: int = 20
    phase_spread: float = np.pi / 4
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in (THREE_RING, THREE_COMPONENT_ER) and self.n_nodes % 3:
            raise ValueError("n_nodes must be divisible by 3 for ring/component graphs")
        for name in ("er_p", "er_p_global", "er_p_sub"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.n_nodes < 3 or self.signal_dim < 1 or self.n_samples < 1 or self.subject_size < 1:
            raise ValueError("sizes must be positive")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.kind == EMBEDDED_ER and not 1 <= self.sub_size <= self.n_nodes:
            raise ValueError("sub_size out of range")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


@dataclass
class LabeledDataset:
    """Snapshots ``X[s]`` (N x T) on a shared graph with labels and grouping ids."""

    graph: Graph
    X: np.ndarray
    labels: np.ndarray
    subjects: np.ndarray
    timepoints: np.ndarray
    truth_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=int)
        self.subjects = np.asarray(self.subjects, dtype=int)
        self.timepoints = np.asarray(self.timepoints, dtype=int)
        S = self.X.shape[0]
        if self.X.ndim != 3 or self.X.shape[1] != self.graph.n_nodes:
            raise ValueError("sample matrices must be N x T with N matching the graph")
        if not (self.labels.shape == self.subjects.shape == self.timepoints.shape == (S,)):
            raise ValueError("labels, subjects and timepoints need one entry per sample")
        if S and self.labels.min() < 0:
            raise ValueError("labels must be non-negative class indices")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0

    @property
    def n_features(self) -> int:
        return self.X.shape[2]

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=int)
        return LabeledDataset(self.graph, self.X[idx], self.labels[idx], self.subjects[idx],
                              self.timepoints[idx], self.truth_mask)

    @property
    def samples(self):
        return list(zip(self.X, self.labels, self.subjects, self.timepoints))


def _er_block(rng, n, p):
    upper = np.triu(rng.random((n, n)) < p, 1)
    A = (upper | upper.T).astype(float)
    return A


def _sub_rng(seed, attempt):
    return np.random.default_rng([int(seed), int(attempt)])


def gen_graph(spec: SyntheticSpec):
    """Graph plus hard ground-truth mask of the informative subgraph.

    The informative part is the middle ring, the first ER component, or the
    planted dense subgraph respectively.
    """
    spec.validate()
    n = spec.n_nodes
    truth = np.zeros(n)
    if spec.kind == THREE_RING:
        r = n // 3
        edges = [(b + i, b + (i + 1) % r) for b in (0, r, 2 * r) for i in range(r)]
        truth[r: 2 * r] = 1.0
        return Graph.from_edges(n, edges), truth
    for attempt in range(MAX_GRAPH_RETRIES):
        rng = _sub_rng(spec.seed, attempt)
        if spec.kind == THREE_COMPONENT_ER:
            r = n // 3
            A = np.zeros((n, n))
            for b in range(3):
                A[b * r:(b + 1) * r, b * r:(b + 1) * r] = _er_block(rng, r, spec.er_p)
            truth = np.zeros(n)
            truth[:r] = 1.0
            g = Graph(A)
            if all(Graph(A[b * r:(b + 1) * r, b * r:(b + 1) * r]).is_connected() for b in range(3)):
                return g, truth
        else:
            A = _er_block(rng, n, spec.er_p_global)
            sub = np.sort(rng.choice(n, size=spec.sub_size, replace=False))
            inner = _er_block(rng, spec.sub_size, spec.er_p_sub)
            A[np.ix_(sub, sub)] = inner
            truth = np.zeros(n)
            truth[sub] = 1.0
            g = Graph(A)
            if g.is_connected() and Graph(inner).is_connected():
                return g, truth
    raise RuntimeError(f"could not generate a connected {spec.kind} graph in {MAX_GRAPH_RETRIES} attempts")


def inject_signals(graph: Graph, truth_mask, spec: SyntheticSpec, class_count: Optional[int] = None) -> LabeledDataset:
    """Balanced labelled snapshots: class-``k`` sinusoids of frequency ``k + 1`` on the
    informative nodes, Gaussian noise everywhere.

    Node phases are drawn once per dataset from ``[0, phase_spread)`` so the
    informative pattern is spatially smooth on the subgraph. Consecutive runs
    of ``subject_size`` snapshots of one class share a subject id.
    """
    c = spec.n_classes if class_count is None else int(class_count)
    if c < 2:
        raise ValueError("class_count must be >= 2")
    truth = np.asarray(truth_mask, dtype=np.float64)
    if truth.shape != (graph.n_nodes,) or not np.any(truth > 0):
        raise ValueError("truth mask must select at least one node")
    rng = np.random.default_rng([int(spec.seed), 7919])
    N, T = graph.n_nodes, spec.signal_dim
    phase = rng.uniform(0.0, spec.phase_spread, size=N)
    tt = np.arange(T)
    S = c * spec.n_samples
    X = np.empty((S, N, T))
    labels = np.empty(S, dtype=int)
    subjects = np.empty(S, dtype=int)
    timepoints = np.empty(S, dtype=int)
    on = truth > 0.5
    per_class_subjects = int(np.ceil(spec.n_samples / spec.subject_size))
    s = 0
    for k in range(c):
        wave = np.sin(2 * np.pi * (k + 1) * tt[None, :] / T + phase[:, None])
        for j in range(spec.n_samples):
            x = spec.noise_sigma * rng.standard_normal((N, T))
            x[on] += wave[on]
            X[s] = x
            labels[s] = k
            subjects[s] = k * per_class_subjects + j // spec.subject_size
            timepoints[s] = j % spec.subject_size
            s += 1
    return LabeledDataset(graph, X, labels, subjects, timepoints, truth.copy())


def make_dataset(spec: SyntheticSpec) -> LabeledDataset:
    graph, truth = gen_graph(spec)
    return inject_signals(graph, truth, spec)


# -- bundles and CSV ingestion -------------------------------------------------

def save_bundle(ds: LabeledDataset, directory, spec: Optional[SyntheticSpec] = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_graph_json(ds.graph, d / "graph.json")
    S, N, T = ds.X.shape
    with open(d / "signals.csv", "w", newline="") as fh:
        fh.write("sample_id,node,t,value\n")
        for s in range(S):
            for i in range(N):
                fh.write("".join(f"{s},{i},{t},{v!r}\n" for t, v in enumerate(ds.X[s, i].tolist())))
    with open(d / "labels.csv", "w", newline="") as fh:
        fh.write("sample_id,label,subject,timepoint\n")
        for s in range(S):
            fh.write(f"{s},{ds.labels[s]},{ds.subjects[s]},{ds.timepoints[s]}\n")
    truth = None if ds.truth_mask is None else [float(v) for v in ds.truth_mask]
    (d / "truth_mask.json").write_text(json.dumps({"mask": truth}))
    if spec is not None:
        (d / "spec.json").write_text(json.dumps(asdict(spec), sort_keys=True))
    return d


def _read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _float_cell(value, path, line, col):
    if value is None or value.strip() == "":
        raise DatasetFormatError(f"{path}: missing value at line {line}, column {col}")
    try:
        return float(value)
    except ValueError:
        raise DatasetFormatError(f"{path}: malformed value {value!r} at line {line}, column {col}") from None


def _load_adjacency(path) -> Graph:
    rows = _read_rows(path)
    if rows and rows[0] and rows[0][0].strip().lower() in ("source", "src", "from"):
        edges = []
        n = 0
        for line, r in enumerate(rows[1:], start=2):
            if len(r) < 2:
                raise DatasetFormatError(f"{path}: line {line} needs source,target[,weight]")
            i = int(_float_cell(r[0], path, line, 1))
            j = int(_float_cell(r[1], path, line, 2))
            w = _float_cell(r[2], path, line, 3) if len(r) > 2 else 1.0
            edges.append((i, j, w))
            n = max(n, i + 1, j + 1)
        return Graph.from_edges(n, edges)
    A = []
    for line, r in enumerate(rows, start=1):
        A.append([_float_cell(v, path, line, c) for c, v in enumerate(r, start=1)])
    widths = {len(r) for r in A}
    if len(widths) != 1 or widths.pop() != len(A):
        raise DatasetFormatError(f"{path}: adjacency must be a square matrix")
    return Graph(np.array(A))


def load_csv_dataset(adjacency_csv, signals_csv, labels_csv) -> LabeledDataset:
    """Load a dataset from an adjacency CSV (dense matrix or ``source,target,weight``
    edge list), a long-format ``sample_id,node,t,value`` signal table and a
    ``sample_id,label[,subject,timepoint]`` table. No ground-truth mask.

    ``adjacency_csv`` may also be an already-built :class:`Graph`.
    """
    graph = adjacency_csv if isinstance(adjacency_csv, Graph) else _load_adjacency(adjacency_csv)
    N = graph.n_nodes
    lrows = _read_rows(labels_csv)
    if not lrows or lrows[0][:2] != ["sample_id", "label"]:
        raise DatasetFormatError(f"{labels_csv}: header must start with sample_id,label")
    ids, labels, subjects, tps = [], [], [], []
    for line, r in enumerate(lrows[1:], start=2):
        if len(r) < len(lrows[0]):
            raise DatasetFormatError(f"{labels_csv}: line {line} has {len(r)} fields, expected {len(lrows[0])}")
        vals = [int(_float_cell(v, labels_csv, line, c)) for c, v in enumerate(r, start=1)]
        ids.append(vals[0])
        labels.append(vals[1])
        subjects.append(vals[2] if len(vals) > 2 else vals[0])
        tps.append(vals[3] if len(vals) > 3 else 0)
    index = {sid: k for k, sid in enumerate(ids)}
    if len(index) != len(ids):
        raise DatasetFormatError(f"{labels_csv}: duplicate sample_id")
    srows = _read_rows(signals_csv)
    if not srows or srows[0] != ["sample_id", "node", "t", "value"]:
        raise DatasetFormatError(f"{signals_csv}: header must be sample_id,node,t,value")
    entries = []
    T = 0
    for line, r in enumerate(srows[1:], start=2):
        if len(r) != 4:
            raise DatasetFormatError(f"{signals_csv}: line {line} has {len(r)} fields, expected 4")
        s = int(_float_cell(r[0], signals_csv, line, 1))
        i = int(_float_cell(r[1], signals_csv, line, 2))
        t = int(_float_cell(r[2], signals_csv, line, 3))
        v = _float_cell(r[3], signals_csv, line, 4)
        if s not in index:
            raise DatasetFormatError(f"{signals_csv}: line {line} refers to unknown sample {s}")
        if not 0 <= i < N:
            raise DatasetFormatError(f"{signals_csv}: line {line} node {i} out of range for {N} nodes")
        if t < 0:
            raise DatasetFormatError(f"{signals_csv}: line {line} negative time index")
        entries.append((index[s], i, t, v))
        T = max(T, t + 1)
    X = np.full((len(ids), N, T), np.nan)
    for k, i, t, v in entries:
        X[k, i, t] = v
    if np.isnan(X).any():
        k, i, t = (int(a[0]) for a in np.nonzero(np.isnan(X)))
        raise DatasetFormatError(f"{signals_csv}: no value for sample {ids[k]}, node {i}, t {t}")
    return LabeledDataset(graph, X, np.array(labels), np.array(subjects), np.array(tps), None)


def _truth_from_bundle(d: Path):
    path = d / "truth_mask.json"
    if not path.exists():
        return None
    truth = json.loads(path.read_text()).get("mask")
    return None if truth is None else np.asarray(truth, dtype=float)


def load_bundle(directory) -> LabeledDataset:
    """Read a bundle written by :func:`save_bundle`."""
    d = Path(directory)
    graph = load_graph_json(d / "graph.json")
    labels_path, signals_path = d / "labels.csv", d / "signals.csv"
    truth = _truth_from_bundle(d)
    try:
        lab = np.loadtxt(labels_path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        sig = np.loadtxt(signals_path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError:
        lab = sig = None
    if lab is not None and lab.shape[1] == 4 and sig.shape[1] == 4 and sig.size:
        S, N = lab.shape[0], graph.n_nodes
        T = int(sig[:, 2].max()) + 1
        if sig.shape[0] == S * N * T and np.array_equal(lab[:, 0], np.arange(S)):
            order = np.lexsort((sig[:, 2], sig[:, 1], sig[:, 0]))
            X = sig[order, 3].reshape(S, N, T)
            keys = sig[order, :3].astype(np.int64)
            grid = np.stack(np.meshgrid(np.arange(S), np.arange(N), np.arange(T), indexing="ij"), -1)
            if np.array_equal(keys, grid.reshape(-1, 3)):
                return LabeledDataset(graph, X, lab[:, 1], lab[:, 2], lab[:, 3], truth)
    # irregular tables go through the validating reader for precise errors
    ds = load_csv_dataset(graph, signals_path, labels_path)
    ds.truth_mask = truth
    return ds
