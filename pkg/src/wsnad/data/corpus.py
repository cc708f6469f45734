"""On-disk corpus: one CSV per modality, matching label CSVs and a JSON manifest.

Layout of a corpus directory::

    <modality>.csv         header = node ids, one row per epoch
    labels_<modality>.csv  same shape, 0/1
    manifest.json          seed, anomaly specs, graph, sample interval, ...
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .series import SensorGraph, SensorSeries

CORPUS_FORMAT = "wsnad-corpus"
CORPUS_VERSION = 1


@dataclass
class Corpus:
    series: SensorSeries
    graph: SensorGraph
    labels: np.ndarray
    seed: int | None = None
    specs: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.labels.shape != self.series.shape:
            raise ValueError(f"labels shape {self.labels.shape} != series shape {self.series.shape}")
        if self.graph.n_nodes != self.series.n_nodes:
            raise ValueError(
                f"graph has {self.graph.n_nodes} nodes but the series has {self.series.n_nodes}"
            )


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_matrix(path: Path, header: list, rows: np.ndarray, fmt) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    path.write_text(buf.getvalue())


def _read_matrix(path: Path, cast) -> tuple[list[str], np.ndarray]:
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[cast(v) for v in row] for row in reader if row]
    return header, np.array(rows)


def save_corpus(corpus: Corpus, directory: str | Path) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    s = corpus.series
    header = [str(i) for i in s.node_ids]
    files = {}
    for mi, name in enumerate(s.modality_names):
        _write_matrix(d / f"{name}.csv", header, s.values[:, mi, :].T, _fmt)
        _write_matrix(d / f"labels_{name}.csv", header, corpus.labels[:, mi, :].T, lambda v: str(int(v)))
        files[name] = {"values": f"{name}.csv", "labels": f"labels_{name}.csv"}
    g = corpus.graph
    manifest = {
        "format": CORPUS_FORMAT,
        "version": CORPUS_VERSION,
        "seed": corpus.seed,
        "node_ids": list(s.node_ids),
        "modalities": list(s.modality_names),
        "n_steps": s.n_steps,
        "start_epoch": s.start_epoch,
        "sample_interval": s.sample_interval,
        "graph": {
            "adjacency": g.adjacency.tolist(),
            "coordinates": None if g.coordinates is None else g.coordinates.tolist(),
        },
        "specs": corpus.specs,
        "events": corpus.events,
        "n_anomalous_cells": int(corpus.labels.sum()),
        "files": files,
        "extra": corpus.extra,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def load_corpus(directory: str | Path) -> Corpus:
    d = Path(directory)
    mpath = d / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"corpus manifest not found: {mpath}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format") != CORPUS_FORMAT:
        raise ValueError(f"{mpath} is not a {CORPUS_FORMAT} manifest")
    if manifest.get("version") != CORPUS_VERSION:
        raise ValueError(f"unsupported corpus version {manifest.get('version')}")
    node_ids = manifest["node_ids"]
    mods = manifest["modalities"]
    n, m, t = len(node_ids), len(mods), manifest["n_steps"]
    values = np.empty((n, m, t))
    labels = np.empty((n, m, t), dtype=np.int8)
    for mi, name in enumerate(mods):
        files = manifest["files"][name]
        header, vals = _read_matrix(d / files["values"], float)
        if header != [str(i) for i in node_ids] or vals.shape != (t, n):
            raise ValueError(f"{files['values']} does not match the manifest")
        values[:, mi, :] = vals.T
        _, labs = _read_matrix(d / files["labels"], int)
        if labs.shape != (t, n):
            raise ValueError(f"{files['labels']} does not match the manifest")
        labels[:, mi, :] = labs.T
    series = SensorSeries(values, node_ids, mods, manifest["sample_interval"], manifest["start_epoch"])
    g = manifest["graph"]
    graph = SensorGraph(np.array(g["adjacency"], dtype=np.int64), None if g["coordinates"] is None else np.array(g["coordinates"]))
    return Corpus(series, graph, labels, manifest.get("seed"), manifest.get("specs", []), manifest.get("events", []), manifest.get("extra", {}))
