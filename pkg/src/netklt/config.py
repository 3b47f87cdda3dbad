"""JSON experiment configuration: schema parsing and object construction.

All schema or filesystem problems surface as :class:`ConfigError` so the CLI
can map them to its configuration exit code.  See the README for the full
schema reference.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .errors import ConfigError, NetkltError
from .graph import NetworkGraph
from .sources import SourceModel, TargetSpec, gauss_markov, hybrid_random_cov


def load_json(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc


def load_covariance_csv(path: str) -> np.ndarray:
    """Dense covariance from CSV (row-major, comma separated)."""
    if not os.path.exists(path):
        raise ConfigError(f"covariance file not found: {path}")
    try:
        mat = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"cannot parse covariance CSV {path}: {exc}") from exc
    return mat


def build_covariance(spec: dict, base_dir: str = ".", seed=None) -> np.ndarray:
    """Covariance from a config stanza.

    Kinds: ``gauss_markov`` {n, rho}; ``hybrid_random`` {n, seed?};
    ``file`` {path}; ``dense`` {data}.
    """
    kind = spec.get("kind")
    try:
        if kind == "gauss_markov":
            return gauss_markov(int(spec["n"]), float(spec["rho"]))
        if kind == "hybrid_random":
            return hybrid_random_cov(int(spec["n"]), seed=spec.get("seed", seed))
        if kind == "file":
            return load_covariance_csv(os.path.join(base_dir, spec["path"]))
        if kind == "dense":
            return np.asarray(spec["data"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad covariance spec {spec!r}: {exc}") from exc
    raise ConfigError(f"unknown covariance kind {kind!r}")


def build_graph(spec, base_dir: str = ".") -> NetworkGraph:
    """Graph from an inline dict or a path to a graph JSON file."""
    if isinstance(spec, str):
        spec = load_json(os.path.join(base_dir, spec))
    if not isinstance(spec, dict):
        raise ConfigError("graph spec must be a dict or a file path")
    try:
        graph = NetworkGraph.from_dict(spec)
        graph.validate()
        return graph
    except (KeyError, TypeError, ValueError, NetkltError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad graph spec: {exc}") from exc


def _build_selector(spec, model_n: int, block_dims) -> np.ndarray:
    if spec == "identity":
        return np.eye(model_n)
    if isinstance(spec, str) and spec.startswith("source:"):
        idx = int(spec.split(":", 1)[1])
        if not (0 <= idx < len(block_dims)):
            raise ConfigError(f"selector references unknown source {idx}")
        start = sum(block_dims[:idx])
        sel = np.zeros((block_dims[idx], model_n))
        sel[:, start : start + block_dims[idx]] = np.eye(block_dims[idx])
        return sel
    return np.asarray(spec, dtype=float)


def build_source_model(spec: dict, graph: NetworkGraph, base_dir: str = ".",
                       seed=None) -> SourceModel:
    """Source model from its config stanza.

    Schema::

        {"block_dims": [4, 4],
         "covariance": {"kind": "gauss_markov", "n": 8, "rho": 0.8},
         "targets": {"4": {"selector": "source:0"}, "5": {"selector": [[...]]}},
         "weights": {"4": 1.0, "5": 1.0},
         "gaussian": true}

    Target nodes are given in the labels of the config's graph; they are
    remapped through the graph's canonical relabeling automatically.
    """
    try:
        block_dims = tuple(int(d) for d in spec["block_dims"])
        sigma_x = build_covariance(spec["covariance"], base_dir, seed=seed)
    except KeyError as exc:
        raise ConfigError(f"source model missing key: {exc}") from exc
    if len(block_dims) != len(graph.sources):
        raise ConfigError(
            f"{len(block_dims)} source blocks for {len(graph.sources)} source nodes"
        )
    n = sum(block_dims)
    targets: Dict[int, TargetSpec] = {}
    for node_str, tgt in spec.get("targets", {}).items():
        node = graph.relabeling.get(int(node_str), int(node_str))
        if "selector" in tgt:
            sel = _build_selector(tgt["selector"], n, block_dims)
            targets[node] = TargetSpec.from_selector(sel, sigma_x)
        else:
            try:
                targets[node] = TargetSpec(
                    dim=int(tgt["dim"]),
                    sigma_r=np.asarray(tgt["sigma_r"], dtype=float),
                    sigma_rx=np.asarray(tgt["sigma_rx"], dtype=float),
                )
            except KeyError as exc:
                raise ConfigError(f"target for node {node_str} missing {exc}") from exc
    missing = [t for t in graph.receivers if t not in targets]
    if missing:
        raise ConfigError(f"receivers without targets: {missing}")
    weights = {
        graph.relabeling.get(int(k), int(k)): float(v)
        for k, v in spec.get("weights", {}).items()
    }
    try:
        return SourceModel(
            block_dims=block_dims,
            sigma_x=sigma_x,
            targets=targets,
            weights=weights,
            gaussian=bool(spec.get("gaussian", False)),
        )
    except (NetkltError, ValueError) as exc:
        raise ConfigError(f"bad source model: {exc}") from exc


@dataclass
class ExperimentConfig:
    """Validated experiment description (one scenario per run)."""

    scenario: str
    raw: dict
    base_dir: str
    out_dir: str
    seed: int = 0
    restarts: Optional[int] = None
    eps: float = 1e-8
    n_max: int = 500
    sweep: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: str, scenario: str,
                  overrides: Optional[dict] = None) -> "ExperimentConfig":
        raw = load_json(path)
        return cls.from_dict(raw, scenario, base_dir=os.path.dirname(path) or ".",
                             overrides=overrides)

    @classmethod
    def from_dict(cls, raw: dict, scenario: str, base_dir: str = ".",
                  overrides: Optional[dict] = None) -> "ExperimentConfig":
        overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
        merged = dict(raw)
        merged.update(overrides)
        sweep = merged.get("sweep", {})
        for key, grid in sweep.items():
            if isinstance(grid, (list, tuple)) and len(grid) == 0:
                raise ConfigError(f"sweep grid {key!r} is empty")
        cfg = cls(
            scenario=scenario,
            raw=merged,
            base_dir=base_dir,
            out_dir=merged.get("out", "results"),
            seed=int(merged.get("seed", 0)),
            restarts=merged.get("restarts"),
            eps=float(merged.get("eps", 1e-8)),
            n_max=int(merged.get("n_max", 500)),
            sweep=sweep,
        )
        return cfg

    def ensure_out_dir(self) -> str:
        os.makedirs(self.out_dir, exist_ok=True)
        return self.out_dir
