"""Directed-acyclic network model.

Nodes apply reduced-dimension linear maps to vector signals; every edge is a
vector channel with an integer bandwidth (its dimension), an optional input
power cap and an optional additive-noise covariance.  Sources are the nodes
with no incoming channels, receivers the nodes with no outgoing ones.

Node labels are canonicalized on construction: sources occupy the lowest
indices, receivers the highest, relays the middle (stable within each group).
``original_labels[new] == old`` records the relabeling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    CycleDetected,
    DimensionMismatch,
    GraphError,
    MissingPowerCap,
    ReceiverHasOutEdge,
    SourceHasInEdge,
    SourceReceiverOverlap,
    UnknownNode,
    ZeroBandwidth,
)
from .linalg import is_psd


@dataclass(frozen=True)
class Edge:
    """Vector channel of dimension ``bandwidth`` from ``tail`` to ``head``."""

    tail: int
    head: int
    bandwidth: int
    power_cap: Optional[float] = None
    noise_cov: Optional[np.ndarray] = None

    def relabeled(self, mapping: dict) -> "Edge":
        return Edge(
            tail=mapping[self.tail],
            head=mapping[self.head],
            bandwidth=self.bandwidth,
            power_cap=self.power_cap,
            noise_cov=self.noise_cov,
        )


@dataclass(frozen=True)
class Cut:
    """Node bipartition; ``f_side`` holds the transmitting side.

    ``source_subset`` / ``receiver_subset`` record the terminal choice that
    generated this cut: the sources placed on ``f_side`` and the receivers
    whose distortion the associated bound constrains (always on the
    complement side).
    """

    f_side: frozenset
    source_subset: frozenset
    receiver_subset: frozenset


@dataclass(frozen=True)
class Layering:
    """Ordered partition V_1..V_{p+1}; every edge goes from a higher-index
    partition to a strictly lower-index one (receivers first, sources last)."""

    partitions: tuple

    @property
    def num_factors(self) -> int:
        return len(self.partitions) - 1


class NetworkGraph:
    """Immutable DAG of bandwidth-weighted vector channels."""

    def __init__(
        self,
        num_nodes: int,
        edges: Sequence[Edge],
        declared_sources: Optional[Sequence[int]] = None,
        declared_receivers: Optional[Sequence[int]] = None,
    ):
        if num_nodes < 1:
            raise GraphError("graph needs at least one node")
        for e in edges:
            if not (0 <= e.tail < num_nodes and 0 <= e.head < num_nodes):
                raise UnknownNode(f"edge ({e.tail},{e.head}) references unknown node")
        seen = set()
        for e in edges:
            if (e.tail, e.head) in seen:
                raise GraphError(f"duplicate edge ({e.tail},{e.head})")
            seen.add((e.tail, e.head))

        self.num_nodes = num_nodes

        # Canonicalize: sources first, receivers last, stable within groups.
        has_in = set(e.head for e in edges)
        has_out = set(e.tail for e in edges)
        srcs = [v for v in range(num_nodes) if v not in has_in]
        recvs = [v for v in range(num_nodes) if v not in has_out and v in has_in]
        relays = [v for v in range(num_nodes) if v in has_in and v in has_out]
        order = srcs + relays + recvs
        mapping = {old: new for new, old in enumerate(order)}
        self.original_labels = tuple(order)
        self.relabeling = mapping

        self.edges = tuple(
            sorted((e.relabeled(mapping) for e in edges), key=lambda e: (e.tail, e.head))
        )
        self.sources = tuple(range(len(srcs)))
        self.receivers = tuple(range(num_nodes - len(recvs), num_nodes))
        self.relays = tuple(range(len(srcs), num_nodes - len(recvs)))

        if declared_sources is not None:
            self._declared_sources = tuple(sorted(mapping[v] for v in declared_sources))
        else:
            self._declared_sources = None
        if declared_receivers is not None:
            self._declared_receivers = tuple(sorted(mapping[v] for v in declared_receivers))
        else:
            self._declared_receivers = None

        self._in_edges = {v: [] for v in range(num_nodes)}
        self._out_edges = {v: [] for v in range(num_nodes)}
        for e in self.edges:
            self._in_edges[e.head].append(e)
            self._out_edges[e.tail].append(e)
        self._topo_cache = None

    # ------------------------------------------------------------------ #

    def in_edges(self, node: int) -> list:
        """Incoming edges of ``node`` in canonical (tail, head) order."""
        self._check_node(node)
        return list(self._in_edges[node])

    def out_edges(self, node: int) -> list:
        self._check_node(node)
        return list(self._out_edges[node])

    def degrees(self, node: int) -> tuple[int, int]:
        """Bandwidth-weighted (in_degree, out_degree) of one node."""
        self._check_node(node)
        d_in = sum(e.bandwidth for e in self._in_edges[node])
        d_out = sum(e.bandwidth for e in self._out_edges[node])
        return d_in, d_out

    def _check_node(self, node: int) -> None:
        if not (0 <= node < self.num_nodes):
            raise UnknownNode(f"node {node} not in graph of size {self.num_nodes}")

    def topological_order(self) -> list:
        """Deterministic topological order (smallest ready index first)."""
        if self._topo_cache is not None:
            return list(self._topo_cache)
        remaining = {v: len(self._in_edges[v]) for v in range(self.num_nodes)}
        ready = sorted(v for v, d in remaining.items() if d == 0)
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            inserted = False
            for e in self._out_edges[v]:
                remaining[e.head] -= 1
                if remaining[e.head] == 0:
                    ready.append(e.head)
                    inserted = True
            if inserted:
                ready.sort()
        if len(order) != self.num_nodes:
            raise CycleDetected("graph contains a directed cycle")
        self._topo_cache = tuple(order)
        return order

    # ------------------------------------------------------------------ #

    def validate(self) -> list:
        """Check structural invariants; returns a list of warning strings.

        Raises the first violated invariant: ZeroBandwidth, CycleDetected,
        SourceHasInEdge or ReceiverHasOutEdge (the latter two only when
        source/receiver lists were declared explicitly).
        """
        for e in self.edges:
            if int(e.bandwidth) != e.bandwidth or e.bandwidth < 1:
                raise ZeroBandwidth(f"edge ({e.tail},{e.head}) has bandwidth {e.bandwidth}")
            if e.power_cap is not None and e.power_cap < 0:
                raise GraphError(f"edge ({e.tail},{e.head}) has negative power cap")
            if e.noise_cov is not None:
                cov = np.asarray(e.noise_cov, dtype=float)
                if cov.shape != (e.bandwidth, e.bandwidth):
                    raise DimensionMismatch(
                        f"noise covariance of edge ({e.tail},{e.head}) has shape "
                        f"{cov.shape}, expected ({e.bandwidth},{e.bandwidth})"
                    )
                if not is_psd(cov):
                    raise GraphError(
                        f"noise covariance of edge ({e.tail},{e.head}) is not PSD"
                    )
        self.topological_order()

        if self._declared_sources is not None:
            for v in self._declared_sources:
                if self._in_edges[v]:
                    raise SourceHasInEdge(f"declared source {v} has incoming edges")
        if self._declared_receivers is not None:
            for v in self._declared_receivers:
                if self._out_edges[v]:
                    raise ReceiverHasOutEdge(f"declared receiver {v} has outgoing edges")

        warnings = []
        if not self.receivers:
            warnings.append("NoReceivers: no node has in-degree > 0 and out-degree 0")
        if not self.sources:
            warnings.append("NoSources: every node has an incoming edge")
        for v in self.relays:
            if not self._reaches_receiver(v):
                warnings.append(f"DeadEndRelay: relay {v} reaches no receiver")
        return warnings

    def _reaches_receiver(self, start: int) -> bool:
        stack, seen = [start], set()
        recvs = set(self.receivers)
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            if v in recvs:
                return True
            stack.extend(e.head for e in self._out_edges[v])
        return False

    # ------------------------------------------------------------------ #

    def layer_partition(self) -> Layering:
        """Longest-path layering: receivers in V_1, all sources lifted to
        V_{p+1}.  Deterministic for a fixed graph."""
        topo = self.topological_order()
        level = {v: 0 for v in range(self.num_nodes)}
        for v in reversed(topo):
            outs = self._out_edges[v]
            if outs:
                level[v] = 1 + max(level[e.head] for e in outs)
        p = max(level.values()) if level else 0
        for v in self.sources:
            level[v] = p
        partitions = [[] for _ in range(p + 1)]
        for v in range(self.num_nodes):
            partitions[level[v]].append(v)
        return Layering(partitions=tuple(tuple(sorted(part)) for part in partitions))

    # ------------------------------------------------------------------ #

    def enumerate_cuts(self) -> list:
        """All (2^|S|-1)(2^|T|-1) source/receiver separating cut classes.

        Each class fixes a nonempty source subset on the transmitting side
        and a nonempty receiver subset on the complement.  Relays that are
        unreachable from every chosen source go to the complement; all
        remaining free nodes (relays and excluded receivers) are placed
        greedily in topological order to minimize the crossing bandwidth,
        ties to the transmitting side.  Smaller crossing bandwidth gives a
        tighter bound downstream.
        """
        srcs, recvs = list(self.sources), list(self.receivers)
        if set(srcs) & set(recvs):
            raise SourceReceiverOverlap("source and receiver sets intersect")
        topo = self.topological_order()
        cuts = []
        for smask in range(1, 1 << len(srcs)):
            chosen_s = [s for k, s in enumerate(srcs) if smask >> k & 1]
            reach = self._reachable_from(chosen_s)
            for tmask in range(1, 1 << len(recvs)):
                chosen_t = [t for k, t in enumerate(recvs) if tmask >> k & 1]
                in_f = {v: False for v in range(self.num_nodes)}
                for s in chosen_s:
                    in_f[s] = True
                free = [
                    v
                    for v in topo
                    if v not in self.sources and v not in chosen_t and v in reach
                ]
                for v in free:
                    in_f[v] = True
                    c_true = self._crossing_bandwidth(in_f)
                    in_f[v] = False
                    c_false = self._crossing_bandwidth(in_f)
                    in_f[v] = c_true <= c_false
                f_side = frozenset(v for v, flag in in_f.items() if flag)
                cuts.append(
                    Cut(
                        f_side=f_side,
                        source_subset=frozenset(chosen_s),
                        receiver_subset=frozenset(chosen_t),
                    )
                )
        return cuts

    def _reachable_from(self, starts) -> set:
        seen = set(starts)
        stack = list(starts)
        while stack:
            v = stack.pop()
            for e in self._out_edges[v]:
                if e.head not in seen:
                    seen.add(e.head)
                    stack.append(e.head)
        return seen

    def _crossing_bandwidth(self, in_f: dict) -> int:
        return sum(e.bandwidth for e in self.edges if in_f[e.tail] and not in_f[e.head])

    def cut_capacity(
        self, cut: Cut, with_power: bool = False
    ) -> tuple[int, Optional[float]]:
        """Total bandwidth and power of edges directed from f_side out.

        Power is ``None`` when some crossing edge lacks a cap, unless
        ``with_power`` is set, in which case MissingPowerCap is raised.
        """
        crossing = [
            e for e in self.edges if e.tail in cut.f_side and e.head not in cut.f_side
        ]
        c_total = sum(e.bandwidth for e in crossing)
        if any(e.power_cap is None for e in crossing):
            if with_power:
                missing = [
                    (e.tail, e.head) for e in crossing if e.power_cap is None
                ]
                raise MissingPowerCap(f"edges without power caps cross the cut: {missing}")
            p_total = None if crossing else 0.0
        else:
            p_total = float(sum(e.power_cap for e in crossing))
        return c_total, p_total

    # ------------------------------------------------------------------ #

    @classmethod
    def from_dict(cls, cfg: dict) -> "NetworkGraph":
        """Build a graph from its JSON-style description.

        Schema::

            {"nodes": 6,
             "edges": [{"tail": 0, "head": 2, "bandwidth": 2,
                        "power": 4.0,                # optional cap
                        "noise_variance": 1.0}, ...] # or "noise_cov": [[..]]
             "sources": [0, 1],     # optional, validated against degrees
             "receivers": [4, 5]}   # optional
        """
        edges = []
        for item in cfg.get("edges", []):
            bw = int(item["bandwidth"])
            cov = None
            if "noise_cov" in item and item["noise_cov"] is not None:
                cov = np.asarray(item["noise_cov"], dtype=float)
            elif "noise_variance" in item and item["noise_variance"] is not None:
                cov = float(item["noise_variance"]) * np.eye(bw)
            power = item.get("power")
            edges.append(
                Edge(
                    tail=int(item["tail"]),
                    head=int(item["head"]),
                    bandwidth=bw,
                    power_cap=None if power is None else float(power),
                    noise_cov=cov,
                )
            )
        return cls(
            num_nodes=int(cfg["nodes"]),
            edges=edges,
            declared_sources=cfg.get("sources"),
            declared_receivers=cfg.get("receivers"),
        )


# Module-level wrappers matching the operation-style interface.


def validate(graph: NetworkGraph) -> list:
    return graph.validate()


def degrees(graph: NetworkGraph, node: int) -> tuple[int, int]:
    return graph.degrees(node)


def layer_partition(graph: NetworkGraph) -> Layering:
    return graph.layer_partition()


def enumerate_cuts(graph: NetworkGraph) -> list:
    return graph.enumerate_cuts()


def cut_capacity(graph: NetworkGraph, cut: Cut, with_power: bool = False):
    return graph.cut_capacity(cut, with_power=with_power)
