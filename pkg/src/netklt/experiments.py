"""Experiment harness: canned topologies, baselines and CSV emitters.

Three scenarios are reproduced end to end:

* ``hybrid`` - two 15-dimensional sources feeding one relay that compresses
  onto a single link; sweeping the source bandwidth moves the network
  between distributed, hybrid and point-to-point operating modes;
* ``distributed-noisy`` - three 4-dimensional correlated sensors over power
  limited AWGN channels to one fusion receiver, swept over compression
  ratio and SNR, with per-point cut-set bounds;
* ``multiple-unicast`` - the two-source/two-receiver butterfly with a shared
  bottleneck: weighted sweeps trace the distortion region, plus a
  comparison table against random-projection and routing baselines.

All outputs are plain CSV (10 significant digits, fixed column order, rows
sorted) so reruns with the same config and seed are byte-identical; plotting
stays out of the core.
"""

from __future__ import annotations

import os
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .bounds import cutset_scan
from .config import ExperimentConfig, build_graph, build_source_model
from .errors import ConfigError, UnsupportedTopology
from .graph import Edge, NetworkGraph
from .ideal import ModelAssembly, optimize_ideal
from .linalg import sym_eig
from .noisy import optimize_noisy
from .sources import SourceModel, TargetSpec, gauss_markov, hybrid_random_cov
from .transfer import FactoredTransform


# --------------------------------------------------------------------------- #
# Canned topologies and sources
# --------------------------------------------------------------------------- #

# 8x8 covariance of the two-source multiple-unicast study: two correlated
# 4-dimensional blocks with mild cross correlation, intentionally asymmetric.
MULTIPLE_UNICAST_COV = np.array(
    [
        [2.4, 1.1, 0.4, 0.0, 0.1, 0.1, 0.0, 0.1],
        [1.1, 1.7, 0.8, 0.4, 0.0, 0.2, 0.2, 0.1],
        [0.4, 0.8, 1.2, 0.0, 0.2, 0.6, 0.1, 0.3],
        [0.0, 0.4, 0.0, 0.8, 0.3, 0.0, 0.1, 0.0],
        [0.1, 0.0, 0.2, 0.3, 1.1, 0.1, 0.2, 0.0],
        [0.1, 0.2, 0.6, 0.0, 0.1, 1.2, 0.2, 0.1],
        [0.0, 0.2, 0.1, 0.1, 0.2, 0.2, 1.0, 0.6],
        [0.1, 0.1, 0.3, 0.0, 0.0, 0.1, 0.6, 1.2],
    ]
)

# Butterfly bandwidths: direct source->receiver links carry 1 dimension,
# everything through the relay pair carries 2.
BUTTERFLY_BANDWIDTHS = {
    (0, 4): 1, (0, 2): 2, (1, 2): 2, (1, 5): 1, (2, 3): 2, (3, 4): 2, (3, 5): 2,
}


def make_butterfly_graph(bandwidths: Optional[dict] = None) -> NetworkGraph:
    """Two sources, two relays in series, two receivers; sources 0/1 also
    have direct links to their same-side receivers 4/5."""
    bw = dict(BUTTERFLY_BANDWIDTHS if bandwidths is None else bandwidths)
    return NetworkGraph(6, [Edge(t, h, c) for (t, h), c in bw.items()])


def make_hybrid_graph(c: int, c34: int) -> NetworkGraph:
    """Two sources -> relay -> receiver, source links of bandwidth c."""
    return NetworkGraph(4, [Edge(0, 2, c), Edge(1, 2, c), Edge(2, 3, c34)])


def make_distributed_graph(
    c: int, power: float, noise_variance: float = 1.0, num_sources: int = 3
) -> NetworkGraph:
    """Star of power-limited AWGN uplinks into one fusion receiver."""
    edges = [
        Edge(i, num_sources, c, power_cap=power, noise_cov=noise_variance * np.eye(c))
        for i in range(num_sources)
    ]
    return NetworkGraph(num_sources + 1, edges)


def source_selector(block_dims, index: int) -> np.ndarray:
    n = sum(block_dims)
    start = sum(block_dims[:index])
    sel = np.zeros((block_dims[index], n))
    sel[:, start : start + block_dims[index]] = np.eye(block_dims[index])
    return sel


def butterfly_model(assignment: str, weights: Optional[dict] = None) -> SourceModel:
    """Multiple-unicast source model; assignment 'direct' reconstructs each
    receiver's same-side source, 'crossed' swaps the targets."""
    cov = MULTIPLE_UNICAST_COV
    sel0 = source_selector((4, 4), 0)
    sel1 = source_selector((4, 4), 1)
    if assignment == "direct":
        targets = {4: TargetSpec.from_selector(sel0, cov),
                   5: TargetSpec.from_selector(sel1, cov)}
    elif assignment == "crossed":
        targets = {4: TargetSpec.from_selector(sel1, cov),
                   5: TargetSpec.from_selector(sel0, cov)}
    else:
        raise ConfigError(f"unknown assignment {assignment!r}")
    return SourceModel(block_dims=(4, 4), sigma_x=cov, targets=targets,
                       weights=weights or {})


def classify_mode(c: int, c34: int) -> str:
    """Operating mode of the two-source relay network.

    The bottleneck link either splits across both sources (Distributed),
    passes one source through whole (PointToPoint), or mixes (Hybrid).
    """
    if c < 1 or c34 < 1:
        raise ValueError("bandwidths must be positive")
    if c <= c34 // 2:
        return "Distributed"
    if c >= c34:
        return "PointToPoint"
    return "Hybrid"


# --------------------------------------------------------------------------- #
# CSV helpers
# --------------------------------------------------------------------------- #


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{value:.10g}"
    return str(value)


def write_csv(path: str, header: Iterable[str], rows: Iterable[Iterable]) -> str:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


# --------------------------------------------------------------------------- #
# Baselines
# --------------------------------------------------------------------------- #


def baseline_random_projections(
    graph: NetworkGraph,
    model: SourceModel,
    trials: int = 100,
    seed=0,
    weights: Optional[dict] = None,
) -> Tuple[float, List[float]]:
    """Mean weighted distortion when every free encoder entry is drawn
    standard normal and only the decoders are optimized."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    assembly = ModelAssembly.build(graph, model, weights)
    skeleton = FactoredTransform(graph, graph.layer_partition(), model.block_dims)
    rng = np.random.default_rng(seed)
    values = []
    for _ in range(trials):
        ft = skeleton.copy()
        ft.random_init(rng)
        t_full = ft.product()
        decoders = assembly.update_decoders(t_full)
        values.append(assembly.distortion(assembly.block_decoder(decoders), t_full))
    return float(np.mean(values)), values


def baseline_routing_nc(
    graph: NetworkGraph, model: SourceModel, assignment: str
) -> Tuple[float, Dict[int, float]]:
    """Eigenvector routing baseline on the butterfly topology.

    'direct' mode: each source's top principal projection goes on its direct
    link and the relay broadcasts both top projections, so every receiver
    sees its own source's best two plus the other's best one.  'crossed'
    mode: the relay adds the two top projections into one dimension and
    forwards source 0's second projection in the other; one receiver then
    recovers its target's best two projections, the other only the best one.
    Eigenvector ties break by index order, so the output is deterministic.
    """
    expected = set(BUTTERFLY_BANDWIDTHS)
    actual = {(e.tail, e.head) for e in graph.edges}
    if actual != expected:
        raise UnsupportedTopology("routing baseline is defined on the butterfly only")
    if assignment not in ("direct", "crossed"):
        raise ConfigError(f"unknown assignment {assignment!r}")

    dims = model.block_dims
    s0, s1 = model.block_slice(0), model.block_slice(1)
    eig0 = sym_eig(model.sigma_x[s0, s0])
    eig1 = sym_eig(model.sigma_x[s1, s1])
    u = eig0.eigenvectors  # principal directions of source 0
    v = eig1.eigenvectors

    transforms: Dict[Tuple[int, int], np.ndarray] = {
        (0, 2): u[:, :2].T,
        (1, 2): v[:, :2].T,
        (3, 4): np.eye(2),
        (3, 5): np.eye(2),
    }
    if assignment == "direct":
        # Relay broadcasts both top projections; the direct links fill in
        # each source's second one.
        transforms[(0, 4)] = u[:, 1][None, :]
        transforms[(1, 5)] = v[:, 1][None, :]
        transforms[(2, 3)] = np.array(
            [[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]
        )
    else:
        # Direct links carry the top projections; the relay adds them into
        # one shared dimension and spends the other on source 0's second,
        # so receiver 5 recovers its target's best two and receiver 4 only
        # its target's best one.
        transforms[(0, 4)] = u[:, 0][None, :]
        transforms[(1, 5)] = v[:, 0][None, :]
        transforms[(2, 3)] = np.array(
            [[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 0.0]]
        )

    assembly = ModelAssembly.build(graph, model)
    ft = FactoredTransform(graph, graph.layer_partition(), dims)
    for (tail, head), mat in transforms.items():
        ft.set_edge_matrix(tail, head, mat)
    t_full = ft.product()
    decoders = assembly.update_decoders(t_full)
    total = assembly.distortion(assembly.block_decoder(decoders), t_full)
    per_receiver = {}
    for t in assembly.receivers:
        g_i = t_full[assembly.obs_slices[t]]
        sigma_rx = assembly.sigma_xr[:, assembly.target_slices[t]].T
        m = decoders[t] @ g_i
        per_receiver[t] = float(
            assembly.target_traces[t]
            - 2.0 * np.trace(m @ sigma_rx.T)
            + np.trace(m @ model.sigma_x @ m.T)
        )
    return float(total), per_receiver


# --------------------------------------------------------------------------- #
# Scenario runners
# --------------------------------------------------------------------------- #


def run_hybrid(config: ExperimentConfig) -> dict:
    """Distortion-versus-bandwidth sweep of the two-source relay network."""
    out_dir = config.ensure_out_dir()
    raw = config.raw
    n_block = int(raw.get("block_dim", 15))
    c34 = int(raw.get("c34", 11))
    c_grid = [int(c) for c in config.sweep.get("c", range(1, 16))]
    if not c_grid:
        raise ConfigError("empty bandwidth grid")
    trace_c = int(raw.get("trace_c", 6))
    restarts = config.restarts if config.restarts is not None else 5

    cov = hybrid_random_cov(2 * n_block, seed=config.seed)
    rows = []
    trace_rows = []
    for c in sorted(c_grid):
        graph = make_hybrid_graph(c, c34)
        model = SourceModel(
            block_dims=(n_block, n_block),
            sigma_x=cov,
            targets={3: TargetSpec.from_selector(np.eye(2 * n_block), cov)},
        )
        state = optimize_ideal(
            graph, model, eps=config.eps, n_max=config.n_max,
            restarts=restarts, seed=config.seed + c,
        )
        rows.append((c, c34, classify_mode(c, c34), state.distortion))
        if c == trace_c:
            for r_idx, trace in enumerate(state.all_traces):
                for it, d in enumerate(trace):
                    trace_rows.append((r_idx, it, d))

    curve = write_csv(
        os.path.join(out_dir, "hybrid_curve.csv"),
        ["c", "c34", "mode", "distortion"],
        rows,
    )
    conv = write_csv(
        os.path.join(out_dir, "hybrid_convergence.csv"),
        ["restart", "iter", "distortion"],
        trace_rows,
    )
    return {"curve": curve, "convergence": conv, "rows": rows}


def run_distributed_noisy(config: ExperimentConfig) -> dict:
    """Compression/SNR sweep of the three-sensor noisy star network.

    Per grid point: achieved distortion from the alternating optimizer and
    the three bounds for the all-sources cut.
    """
    out_dir = config.ensure_out_dir()
    raw = config.raw
    block = int(raw.get("block_dim", 4))
    rho = float(raw.get("rho", 0.8))
    num_sources = int(raw.get("num_sources", 3))
    n = block * num_sources
    alphas = [float(a) for a in config.sweep.get("alpha", (0.25, 0.5, 0.75, 1.0))]
    snrs = [float(s) for s in config.sweep.get("snr_db", np.arange(-10.0, 31.0, 2.0))]
    if not alphas or not snrs:
        raise ConfigError("empty sweep grid")
    restarts = config.restarts if config.restarts is not None else 3

    cov = gauss_markov(n, rho)
    rows = []
    for alpha in sorted(alphas):
        c = int(round(alpha * block))
        if c < 1:
            raise ConfigError(f"alpha {alpha} gives zero bandwidth")
        for snr_db in sorted(snrs):
            snr = 10.0 ** (snr_db / 10.0)
            power = c * snr
            graph = make_distributed_graph(c, power, num_sources=num_sources)
            model = SourceModel(
                block_dims=(block,) * num_sources,
                sigma_x=cov,
                targets={num_sources: TargetSpec.from_selector(np.eye(n), cov)},
                gaussian=True,
            )
            state = optimize_noisy(
                graph, model, eps=config.eps, n_max=config.n_max,
                restarts=restarts, seed=config.seed,
            )
            scan = cutset_scan(graph, model, noisy=True)
            full = next(
                r for r in scan.reports
                if len(r.cut.source_subset) == num_sources
            )
            rows.append(
                (alpha, snr_db, state.distortion, full.d_ideal, full.d_sdp,
                 full.d_info)
            )

    path = write_csv(
        os.path.join(out_dir, "distributed_noisy.csv"),
        ["alpha", "snr_db", "distortion", "bound_ideal", "bound_sdp", "bound_info"],
        rows,
    )
    return {"surface": path, "rows": rows}


def run_multiple_unicast(config: ExperimentConfig) -> dict:
    """Distortion regions and method comparison on the butterfly network."""
    out_dir = config.ensure_out_dir()
    raw = config.raw
    num_weights = int(raw.get("num_weights", 32))
    ratio_lo, ratio_hi = (float(x) for x in raw.get("ratio_range", (0.01, 100.0)))
    restarts = config.restarts if config.restarts is not None else 20
    trials = int(raw.get("random_trials", 100))
    graph = make_butterfly_graph()

    # Log-uniform spacing over the weight-ratio range.
    ratios = np.exp(
        np.linspace(np.log(ratio_lo), np.log(ratio_hi), num_weights)
    )

    outputs = {}
    table_rows = []
    for label, assignment in (("b", "direct"), ("c", "crossed")):
        model = butterfly_model(assignment)
        region_rows = []
        for k, ratio in enumerate(ratios):
            weights = {4: float(ratio), 5: 1.0}
            state = optimize_ideal(
                graph, model, weights=weights, eps=config.eps,
                n_max=config.n_max, restarts=restarts,
                seed=config.seed + 1000 * k,
            )
            scan = cutset_scan(graph, model, weights=weights)
            region_rows.append(
                (ratio, weights[4], weights[5],
                 state.per_receiver[4], state.per_receiver[5],
                 scan.tightest.d_ideal)
            )
        outputs[f"region_{label}"] = write_csv(
            os.path.join(out_dir, f"multiple_unicast_region_{label}.csv"),
            ["weight_ratio", "w_first", "w_second", "d_first", "d_second",
             "bound_weighted"],
            region_rows,
        )

        # Comparison table at the equal-weight point.
        mean_rand, _ = baseline_random_projections(
            graph, model, trials=trials, seed=config.seed
        )
        routing, _ = baseline_routing_nc(graph, model, assignment)
        state = optimize_ideal(
            graph, model, eps=config.eps, n_max=config.n_max,
            restarts=max(restarts, 20), seed=config.seed,
        )
        scan = cutset_scan(graph, model)
        table_rows.extend(
            [
                (label, "random_projections", mean_rand),
                (label, "routing_network_coding", routing),
                (label, "iterative_qp", state.distortion),
                (label, "lower_bound", scan.tightest.d_ideal),
            ]
        )

    outputs["table"] = write_csv(
        os.path.join(out_dir, "multiple_unicast_table.csv"),
        ["assignment", "method", "sum_distortion"],
        table_rows,
    )
    outputs["table_rows"] = table_rows
    return outputs


def run_bounds(config: ExperimentConfig) -> dict:
    """Cut-set bound scan of an arbitrary configured network."""
    out_dir = config.ensure_out_dir()
    raw = config.raw
    if "graph" not in raw or "source" not in raw:
        raise ConfigError("bounds scenario needs 'graph' and 'source' sections")
    graph = build_graph(raw["graph"], config.base_dir)
    model = build_source_model(raw["source"], graph, config.base_dir, seed=config.seed)
    noisy = bool(raw.get("noisy", False))
    scan = cutset_scan(graph, model, noisy=noisy)
    rows = []
    for idx, rep in enumerate(scan.reports):
        rows.append(
            (
                idx,
                ";".join(str(v) for v in sorted(rep.cut.f_side)),
                ";".join(str(v) for v in sorted(rep.cut.source_subset)),
                ";".join(str(v) for v in sorted(rep.cut.receiver_subset)),
                rep.c_f,
                "" if rep.p_f is None else rep.p_f,
                rep.d_ideal,
                "" if rep.d_sdp is None else rep.d_sdp,
                "" if rep.d_info is None else rep.d_info,
            )
        )
    path = write_csv(
        os.path.join(out_dir, "bounds.csv"),
        ["cut_id", "f_side", "sources", "receivers", "c_f", "p_f",
         "d_ideal", "d_sdp", "d_info"],
        rows,
    )
    return {"bounds": path, "scan": scan}


def run_solve(config: ExperimentConfig) -> dict:
    """Generic config-driven optimization of one network."""
    out_dir = config.ensure_out_dir()
    raw = config.raw
    if "graph" not in raw or "source" not in raw:
        raise ConfigError("solve scenario needs 'graph' and 'source' sections")
    graph = build_graph(raw["graph"], config.base_dir)
    model = build_source_model(raw["source"], graph, config.base_dir, seed=config.seed)
    mode = raw.get("mode", "ideal")
    restarts = config.restarts if config.restarts is not None else 20
    if mode == "ideal":
        state = optimize_ideal(
            graph, model, eps=config.eps, n_max=config.n_max,
            restarts=restarts, seed=config.seed,
        )
    elif mode == "noisy":
        state = optimize_noisy(
            graph, model, eps=config.eps, n_max=config.n_max,
            restarts=restarts, seed=config.seed,
        )
    else:
        raise ConfigError(f"unknown mode {mode!r} (expected 'ideal' or 'noisy')")

    trace_rows = []
    for r_idx, trace in enumerate(state.all_traces):
        for it, d in enumerate(trace):
            trace_rows.append((r_idx, it, d))
    trace_path = write_csv(
        os.path.join(out_dir, "trace.csv"),
        ["restart", "iter", "distortion"],
        trace_rows,
    )
    transform_paths = []
    for (tail, head), mat in sorted(state.factored.to_edge_transforms().items()):
        p = os.path.join(out_dir, f"transform_{tail}_{head}.csv")
        np.savetxt(p, np.atleast_2d(mat), delimiter=",", fmt="%.10g")
        transform_paths.append(p)
    summary = write_csv(
        os.path.join(out_dir, "summary.csv"),
        ["mode", "distortion", "iterations", "restart_index"],
        [(mode, state.distortion, state.iterations, state.restart_index)],
    )
    return {
        "trace": trace_path,
        "summary": summary,
        "transforms": transform_paths,
        "state": state,
    }
