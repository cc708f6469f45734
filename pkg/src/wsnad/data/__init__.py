from .corpus import Corpus, load_corpus, save_corpus
from .graph import build_adjacency, grid_coordinates
from .ibrl import IbrlData, format_ibrl, parse_coordinates, parse_ibrl
from .inject import ANOMALY_TYPES, AnomalySpec, InjectionEvent, Injected, default_specs, inject_anomalies, local_std
from .series import IBRL_MODALITIES, IngestReport, SensorGraph, SensorSeries
from .synth import SynthParams, synth_generate
from .windows import (
    DEFAULT_EPSILON,
    Standardizer,
    WindowBatch,
    destandardize,
    slide_windows,
    standardize,
    window_count,
    window_starts,
)

__all__ = [
    "ANOMALY_TYPES",
    "AnomalySpec",
    "Corpus",
    "DEFAULT_EPSILON",
    "IBRL_MODALITIES",
    "IbrlData",
    "IngestReport",
    "InjectionEvent",
    "Injected",
    "SensorGraph",
    "SensorSeries",
    "Standardizer",
    "SynthParams",
    "WindowBatch",
    "build_adjacency",
    "default_specs",
    "destandardize",
    "format_ibrl",
    "grid_coordinates",
    "inject_anomalies",
    "load_corpus",
    "local_std",
    "parse_coordinates",
    "parse_ibrl",
    "save_corpus",
    "slide_windows",
    "standardize",
    "synth_generate",
    "window_count",
    "window_starts",
]
