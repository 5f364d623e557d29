"""Risks, generalization gaps, sweeps over graph size and log-log trend fits.

Every random draw in a sweep comes from a seed derived from the master seed
with ``derive_seed(master, stream, *keys)``: a splitmix64 chain over the
stream constant and the integer keys (trial, n, manifold index). Streams:
SAMPLE for training graphs, EVAL for evaluation graphs, INIT for initial
weights and SHUFFLE for minibatch order. Initial weights and evaluation
graphs depend on the trial only, so every n in a sweep shares them.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InvalidArgument
from .graph import KernelGraph, KernelPlan, build_graph
from .manifold import (BandlimitedSignal, ManifoldSpec, PointSet, analytic_spectrum, quadrature_grid,
                       sample_points, synthesize_signal)
from .neural import (Architecture, ParamSet, Sample, TrainConfig, accuracy, as_shift, gnn_forward,
                     init_params, loss_value, mnn_forward, pointwise_loss, train)
from .spectral import eig_sym

MASK64 = (1 << 64) - 1
SAMPLE, EVAL, INIT, SHUFFLE = 1, 2, 3, 4
OVERFIT_ACC = 0.95


def splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *keys: int) -> int:
    s = splitmix64(int(master) & MASK64)
    for k in keys:
        s = splitmix64(s ^ (int(k) & MASK64))
    return s


# ---------------------------------------------------------------- tasks

@dataclass(frozen=True)
class NodeTask:
    """Regress ``target`` from ``input`` node-wise; with cross-entropy the
    class of a node is ``target > 0``."""

    spec: ManifoldSpec
    input: BandlimitedSignal
    target: BandlimitedSignal

    def __post_init__(self):
        if self.input.spec != self.spec or self.target.spec != self.spec:
            raise InvalidArgument("task signals must live on the task manifold")

    def signals(self, pts, loss="abs"):
        x = synthesize_signal(self.input, pts)
        y = synthesize_signal(self.target, pts)
        return x, (y > 0).astype(int) if loss == "ce" else y

    def targets_at(self, params, loss="abs"):
        y = self.target.evaluate(params)
        return (y > 0).astype(int) if loss == "ce" else y


def make_node_task(spec, input_coeffs, target_coeffs, normalize_input=True) -> NodeTask:
    f = BandlimitedSignal(tuple(input_coeffs), spec)
    return NodeTask(spec, f.normalized() if normalize_input else f, BandlimitedSignal(tuple(target_coeffs), spec))


@dataclass(frozen=True)
class GraphTask:
    entries: tuple  # of (ManifoldSpec, BandlimitedSignal, label)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(tuple(e) for e in self.entries))
        if len(self.entries) < 2:
            raise InvalidArgument("a graph task needs at least two manifolds")
        for spec, sig, label in self.entries:
            if isinstance(sig, BandlimitedSignal) and sig.spec != spec:
                raise InvalidArgument("input signal must live on its manifold")
            if not math.isfinite(label):
                raise InvalidArgument("labels must be finite")

    @property
    def count(self) -> int:
        return len(self.entries)


INPUT_SHAPES = {"constant": (1.0,), "harmonic": (0.0, 1.0)}


@dataclass(frozen=True)
class CoordinateSignal:
    """Node signal equal to one ambient coordinate; works on mesh clouds too."""

    axis: int = 2

    def values(self, pts) -> np.ndarray:
        return np.asarray(pts.points[:, self.axis], dtype=float)


@dataclass(frozen=True)
class ConstantSignal:
    value: float = 1.0

    def values(self, pts) -> np.ndarray:
        return np.full(pts.n, float(self.value))


def node_signal(sig, pts) -> np.ndarray:
    if isinstance(sig, BandlimitedSignal):
        return synthesize_signal(sig, pts)
    return sig.values(pts)


def make_circle_graph_task(radii=(1.0, 1.5), inputs=("constant", "harmonic"), labels=(0.0, 1.0)) -> GraphTask:
    if not len(radii) == len(inputs) == len(labels):
        raise InvalidArgument("radii, inputs and labels must have equal length")
    entries = []
    for r, kind, y in zip(radii, inputs, labels):
        if kind not in INPUT_SHAPES:
            raise InvalidArgument(f"unknown input shape {kind!r}; expected one of {sorted(INPUT_SHAPES)}")
        spec = ManifoldSpec.circle(r)
        entries.append((spec, BandlimitedSignal(INPUT_SHAPES[kind], spec), float(y)))
    return GraphTask(tuple(entries))


# ---------------------------------------------------------------- estimators

@dataclass(frozen=True)
class ExactMNN:
    """Quadrature over the manifold using the MNN with the same taps."""

    q: int | None = None
    m_proj: int | None = None


@dataclass(frozen=True)
class FreshGraph:
    """Monte Carlo over a newly sampled graph of ``n_eval`` nodes."""

    n_eval: int = 4096
    plan: KernelPlan = KernelPlan()
    seed: int = 0
    response: str = "polynomial"

    def graph(self, spec: ManifoldSpec, key: int = 0) -> KernelGraph:
        pts = sample_points(spec, self.n_eval, derive_seed(self.seed, key))
        return build_graph(pts, self.plan.at(self.n_eval, spec.intrinsic_dim))


def _shift(graph: KernelGraph, response):
    return as_shift(graph.L, response)


# ---------------------------------------------------------------- risks

def empirical_risk_node(H: ParamSet, graph: KernelGraph, x, y, loss="abs", response="polynomial") -> float:
    """Mean node loss of the GNN output on ``graph``."""
    out = gnn_forward(H, _shift(graph, response), x)
    if np.asarray(y).shape[0] != graph.n:
        raise InvalidArgument(f"targets have {np.asarray(y).shape[0]} rows, graph has {graph.n} nodes")
    return loss_value(loss, out if loss == "ce" else out.reshape(np.asarray(y).shape), y)


def _mnn_grid(spec, signals, est: ExactMNN):
    m_band = max(s.bandlimit_index for s in signals)
    m_proj = est.m_proj or 4 * m_band
    grid = quadrature_grid(spec, est.q or 64 * m_proj)
    return m_proj, grid


def statistical_risk_node(H: ParamSet, task: NodeTask, estimator, loss="abs") -> float:
    if isinstance(estimator, ExactMNN):
        if not task.spec.is_analytic:
            raise InvalidArgument("ExactMNN needs an analytic manifold")
        m_proj, grid = _mnn_grid(task.spec, [task.input], estimator)
        out = mnn_forward(H, task.spec, task.input, grid=grid, m_proj=m_proj)
        y = task.targets_at(grid.points.params, loss)
        return float(grid.weights @ pointwise_loss(loss, out if loss == "ce" else out[:, 0], y))
    if isinstance(estimator, FreshGraph):
        graph = estimator.graph(task.spec)
        x, y = task.signals(graph.points, loss)
        return empirical_risk_node(H, graph, x, y, loss, estimator.response)
    raise InvalidArgument(f"unknown estimator {estimator!r}")


def generalization_gap(empirical: float, statistical: float) -> float:
    return abs(statistical - empirical)


def graph_readout(H: ParamSet, graph: KernelGraph, x, response="polynomial") -> np.ndarray:
    """Node mean of the final-layer features."""
    return gnn_forward(H, _shift(graph, response), x).mean(axis=0)


def _readout_loss(loss, readouts, labels):
    total = 0.0
    for r, y in zip(readouts, labels):
        total += loss_value(loss, r, int(y) if loss == "ce" else [y] * r.size)
    return total


def empirical_risk_graph(H: ParamSet, graphs: Sequence[KernelGraph], inputs, labels, loss="abs",
                         response="polynomial") -> float:
    """Sum over graphs of the loss of each node-mean readout."""
    if not len(graphs) == len(inputs) == len(labels):
        raise InvalidArgument("graphs, inputs and labels must have equal length")
    readouts = [graph_readout(H, g, x, response) for g, x in zip(graphs, inputs)]
    return _readout_loss(loss, readouts, labels)


def manifold_readouts(H: ParamSet, task: GraphTask, estimator) -> list:
    if isinstance(estimator, ExactMNN):
        out = []
        for spec, sig, _ in task.entries:
            if not spec.is_analytic or not isinstance(sig, BandlimitedSignal):
                raise InvalidArgument("ExactMNN needs analytic manifolds")
            m_proj, grid = _mnn_grid(spec, [sig], estimator)
            vals = mnn_forward(H, spec, sig, grid=grid, m_proj=m_proj)
            out.append(grid.integrate(vals))
        return out
    if isinstance(estimator, FreshGraph):
        out = []
        for k, (spec, sig, _) in enumerate(task.entries):
            graph = estimator.graph(spec, k)
            out.append(graph_readout(H, graph, node_signal(sig, graph.points), estimator.response))
        return out
    raise InvalidArgument(f"unknown estimator {estimator!r}")


def statistical_risk_graph(H: ParamSet, task: GraphTask, estimator, loss="abs") -> float:
    readouts = manifold_readouts(H, task, estimator)
    return _readout_loss(loss, readouts, [y for _, _, y in task.entries])


# ---------------------------------------------------------------- fits and reports

@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    pearson: float
    points: int
    excluded: int = 0
    degenerate: bool = False


def loglog_fit(n_values, gaps) -> FitResult:
    """Least squares of log(gap) on log(n) with Pearson r (natural logs).

    Non-positive or non-finite gaps are dropped and counted. With fewer than
    three usable points the fit is flagged degenerate and r is reported as 0.
    """
    n = np.asarray(n_values, dtype=float)
    g = np.asarray(gaps, dtype=float)
    if n.shape != g.shape:
        raise InvalidArgument("n_values and gaps differ in length")
    keep = np.isfinite(g) & (g > 0)
    x, y = np.log(n[keep]), np.log(g[keep])
    excluded = int((~keep).sum())
    if x.size == 0:
        return FitResult(0.0, 0.0, 0.0, 0, excluded, True)
    if x.size == 1 or np.ptp(x) == 0:
        return FitResult(0.0, float(np.mean(y)), 0.0, int(x.size), excluded, True)
    dx = x - x.mean()
    if np.ptp(y) == 0:
        slope, r = 0.0, 0.0
    else:
        dy = y - y.mean()
        slope = float(dx @ dy / (dx @ dx))
        r = float(np.clip(dx @ dy / math.sqrt((dx @ dx) * (dy @ dy)), -1.0, 1.0))
    intercept = float(y.mean() - slope * x.mean())
    degenerate = x.size < 3
    return FitResult(slope, intercept, 0.0 if degenerate else r, int(x.size), excluded, degenerate)


@dataclass(frozen=True)
class CellResult:
    n: int
    trial: int
    empirical_risk: float
    statistical_risk: float
    gap: float
    train_acc: float = math.nan
    eval_acc: float = math.nan
    reg_value: float = math.nan
    output_diff: float = math.nan
    reg_weight: float = 0.0
    loss_trace: tuple = ()

    @property
    def flag_overfit(self) -> bool:
        return bool(self.train_acc > OVERFIT_ACC)

    @property
    def accuracy_gap(self) -> float:
        """Percentage points between train and eval accuracy."""
        return 100.0 * abs(self.train_acc - self.eval_acc)


METRICS = {
    "loss": lambda c: c.gap,
    "accuracy": lambda c: c.accuracy_gap,
    "output": lambda c: c.output_diff,
}


@dataclass(eq=False)
class GapReport:
    rows: list
    mode: str = "loss"
    n_values: list = field(init=False)
    gap_mean: list = field(init=False)
    gap_std: list = field(init=False)
    fit: FitResult = field(init=False)
    fit_unflagged: FitResult = field(init=False)

    def __post_init__(self):
        if self.mode not in METRICS:
            raise InvalidArgument(f"unknown report mode {self.mode!r}")
        self.rows = sorted(self.rows, key=lambda c: (c.n, c.trial))
        self.n_values = sorted({c.n for c in self.rows})
        self.gap_mean, self.gap_std = self._stats(self.rows)
        self.fit = loglog_fit(self.n_values, self.gap_mean)
        kept = [c for c in self.rows if not c.flag_overfit]
        kept_n = sorted({c.n for c in kept})
        means, _ = self._stats(kept)
        self.fit_unflagged = loglog_fit(kept_n, means)

    def _stats(self, rows):
        metric = METRICS[self.mode]
        means, stds = [], []
        for n in sorted({c.n for c in rows}):
            vals = np.array([metric(c) for c in rows if c.n == n])
            means.append(float(vals.mean()))
            stds.append(float(vals.std(ddof=1)) if vals.size > 1 else 0.0)
        return means, stds

    def as_mode(self, mode: str) -> "GapReport":
        return GapReport(list(self.rows), mode)

    def mean_of(self, attr: str, n: int) -> float:
        return float(np.mean([getattr(c, attr) for c in self.rows if c.n == n]))


def _run_cells(fn, cells, threads):
    def guarded(cell):
        try:
            return fn(*cell)
        except Exception as exc:
            if exc.args and isinstance(exc.args[0], str):
                exc.args = (f"n={cell[0]}, trial={cell[1]}: {exc.args[0]}",) + exc.args[1:]
            raise

    if threads > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(guarded, cells))
    return [guarded(c) for c in cells]


def _check_sweep(n_values, trials):
    n_values = [int(n) for n in n_values]
    if not n_values or any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise InvalidArgument("n_values must be non-empty and strictly ascending")
    if n_values[0] < 2:
        raise InvalidArgument("graphs need at least two nodes")
    if trials < 1:
        raise InvalidArgument("trials must be >= 1")
    return n_values


def _fit_params(arch, items, cfg, weights, init_seed, shuffle_seed, lam_max, readout=None):
    if weights == "random":
        return init_params(arch, init_seed), ()
    if weights != "trained":
        raise InvalidArgument(f"weights must be 'trained' or 'random', got {weights!r}")
    result = train(arch, items, replace(cfg, seed=shuffle_seed), lam_max=lam_max,
                   init_seed=init_seed, readout=readout)
    return result.params, tuple(result.losses)


def node_sweep(task: NodeTask, arch: Architecture, plan: KernelPlan, n_values, trials: int,
               cfg: TrainConfig, weights="trained", estimator=None, master_seed=0, threads=1,
               response="polynomial") -> GapReport:
    """Gap between training-graph risk and statistical risk for each (n, trial).

    ``estimator`` defaults to ``FreshGraph(4096, plan)``; its seed is replaced
    by a per-trial derived seed.
    """
    n_values = _check_sweep(n_values, trials)
    estimator = estimator or FreshGraph(4096, plan, response=response)
    loss = cfg.loss
    d = task.spec.intrinsic_dim

    def cell(n, trial):
        pts = sample_points(task.spec, n, derive_seed(master_seed, SAMPLE, trial, n))
        graph = build_graph(pts, plan.at(n, d))
        x, y = task.signals(pts, loss)
        lam_max = graph.lambda_max()
        shift = _shift(graph, response)
        H, trace = _fit_params(arch, [Sample(shift, x, y)], cfg, weights,
                               derive_seed(master_seed, INIT, trial),
                               derive_seed(master_seed, SHUFFLE, trial, n), lam_max)
        emp = empirical_risk_node(H, graph, x, y, loss, response)
        est = replace(estimator, seed=derive_seed(master_seed, EVAL, trial)) \
            if isinstance(estimator, FreshGraph) else estimator
        stat = statistical_risk_node(H, task, est, loss)
        train_acc = eval_acc = math.nan
        if loss == "ce":
            train_acc = accuracy(gnn_forward(H, shift, x), y)
            eval_acc = _eval_accuracy_node(H, task, est)
        return CellResult(n, trial, emp, stat, generalization_gap(emp, stat), train_acc, eval_acc,
                          H.continuity(lam_max), reg_weight=cfg.reg_weight, loss_trace=trace)

    cells = [(n, t) for n in n_values for t in range(trials)]
    return GapReport(_run_cells(cell, cells, threads))


def _eval_accuracy_node(H, task, est):
    if isinstance(est, FreshGraph):
        graph = est.graph(task.spec)
        x, y = task.signals(graph.points, "ce")
        return accuracy(gnn_forward(H, _shift(graph, est.response), x), y)
    m_proj, grid = _mnn_grid(task.spec, [task.input], est)
    out = mnn_forward(H, task.spec, task.input, grid=grid, m_proj=m_proj)
    hit = np.argmax(out, axis=1) == task.targets_at(grid.points.params, "ce")
    return float(grid.weights @ hit)


def regularizer_sweep(task: NodeTask, arch: Architecture, plan: KernelPlan, n_values, mu_values,
                      trials: int, cfg: TrainConfig, estimator=None, master_seed=0, threads=1,
                      response="polynomial") -> dict:
    """One trained node sweep per regulariser weight; seeds do not depend on the weight."""
    mu_values = [float(m) for m in mu_values]
    if len(set(mu_values)) != len(mu_values):
        raise InvalidArgument("regulariser weights must be distinct")
    return {mu: node_sweep(task, arch, plan, n_values, trials, replace(cfg, reg_weight=mu), "trained",
                           estimator, master_seed, threads, response)
            for mu in mu_values}


def graph_output_difference(H: ParamSet, train_graphs, train_inputs, eval_graphs, eval_inputs,
                            response="polynomial") -> float:
    """Mean over manifolds of |readout on training graph - readout on eval graph|."""
    diffs = [np.mean(np.abs(graph_readout(H, g, x, response) - graph_readout(H, ge, xe, response)))
             for g, x, ge, xe in zip(train_graphs, train_inputs, eval_graphs, eval_inputs)]
    return float(np.mean(diffs))


def graph_sweep(task: GraphTask, arch: Architecture, plan: KernelPlan, n_values, trials: int,
                cfg: TrainConfig, eval_n: int, weights="trained", master_seed=0, threads=1,
                response="polynomial", coupled=True) -> GapReport:
    """Train on size-n graphs of every manifold; compare against size-``eval_n`` graphs.

    With ``coupled`` the training nodes are the first n nodes of the trial's
    evaluation sample (so n = eval_n gives identical graphs); otherwise they
    are drawn independently. The report's primary metric is the readout
    difference (mode "output"); risk gaps are kept in the rows.
    """
    n_values = _check_sweep(n_values, trials)
    if eval_n < n_values[-1]:
        raise InvalidArgument("eval_n must be at least the largest training size")
    loss = cfg.loss
    labels = [y for _, _, y in task.entries]

    def graphs_for(size, seeds, prefix_of=None):
        gs, xs = [], []
        for i, ((spec, sig, _), seed) in enumerate(zip(task.entries, seeds)):
            if prefix_of is None:
                pts = sample_points(spec, size, seed)
            else:
                full = prefix_of[i].points
                pts = PointSet(full.points[:size], spec, full.seed,
                               None if full.params is None else full.params[:size])
            g = build_graph(pts, plan.at(size, spec.intrinsic_dim))
            gs.append(g)
            xs.append(node_signal(sig, g.points))
        return gs, xs

    def cell(n, trial):
        k = range(task.count)
        ge, xe = graphs_for(eval_n, [derive_seed(master_seed, EVAL, trial, i) for i in k])
        gs, xs = graphs_for(n, [derive_seed(master_seed, SAMPLE, trial, n, i) for i in k],
                            ge if coupled else None)
        lam_max = max(g.lambda_max() for g in gs)
        items = [Sample(_shift(g, response), x, int(y) if loss == "ce" else y)
                 for g, x, y in zip(gs, xs, labels)]
        H, trace = _fit_params(arch, items, cfg, weights, derive_seed(master_seed, INIT, trial),
                               derive_seed(master_seed, SHUFFLE, trial, n), lam_max, readout="mean")
        emp = empirical_risk_graph(H, gs, xs, labels, loss, response)
        stat = empirical_risk_graph(H, ge, xe, labels, loss, response)
        diff = graph_output_difference(H, gs, xs, ge, xe, response)
        train_acc = eval_acc = math.nan
        if loss == "ce":
            train_acc = float(np.mean([np.argmax(graph_readout(H, g, x, response)) == y
                                       for g, x, y in zip(gs, xs, labels)]))
            eval_acc = float(np.mean([np.argmax(graph_readout(H, g, x, response)) == y
                                      for g, x, y in zip(ge, xe, labels)]))
        return CellResult(n, trial, emp, stat, generalization_gap(emp, stat), train_acc, eval_acc,
                          H.continuity(lam_max), diff, cfg.reg_weight, trace)

    cells = [(n, t) for n in n_values for t in range(trials)]
    return GapReport(_run_cells(cell, cells, threads), mode="output")


# ---------------------------------------------------------------- eigenvalue convergence

@dataclass(eq=False)
class EigTable:
    n_values: list
    i_values: list
    errors: dict  # (n, trial) -> array over i_values; trials with a disconnected graph are absent
    excluded: dict  # n -> number of dropped trials
    analytic_ratios: np.ndarray

    def mean_error(self, n) -> np.ndarray:
        rows = [v for (m, _), v in self.errors.items() if m == n]
        if not rows:
            return np.full(len(self.i_values), math.nan)
        return np.mean(rows, axis=0)


def eig_convergence_run(spec: ManifoldSpec, kind: str, n_values, trials: int, i_max: int = 6,
                        delta=0.1, c=1.0, master_seed=0, threads=1, epsilon=None) -> EigTable:
    """``|lam_{i,N} / lam_{2,N} - lam_i / lam_2|`` for ``2 <= i <= i_max``.

    Graphs use the bandwidth schedule unless ``epsilon`` is given.
    """
    n_values = _check_sweep(n_values, trials)
    if i_max < 2:
        raise InvalidArgument("i_max must be >= 2")
    exact = np.array([p.eigenvalue for p in analytic_spectrum(spec, i_max)])
    ratios = exact[1:] / exact[1]
    plan = KernelPlan(kind, epsilon, delta, c)

    def cell(n, trial):
        pts = sample_points(spec, n, derive_seed(master_seed, SAMPLE, trial, n))
        graph = build_graph(pts, plan.at(n, spec.intrinsic_dim))
        lam = eig_sym(graph.L, i_max).eigenvalues
        if lam[1] < 1e-12:
            return None
        return np.abs(lam[1:] / lam[1] - ratios)

    cells = [(n, t) for n in n_values for t in range(trials)]
    results = _run_cells(cell, cells, threads)
    errors = {cell: r for cell, r in zip(cells, results) if r is not None}
    excluded = {n: sum(1 for (m, _), r in zip(cells, results) if m == n and r is None) for n in n_values}
    return EigTable(n_values, list(range(2, i_max + 1)), errors, excluded, ratios)


# ---------------------------------------------------------------- MNN / GNN consistency

def mnn_gnn_discrepancy(H: ParamSet, signal: BandlimitedSignal, n: int, plan: KernelPlan, seed,
                        m_proj=None, q=None) -> float:
    """Mean over sampled nodes of |GNN output - MNN output at that node|.

    The GNN applies the diffusion response ``exp(-k lam)`` in the full
    eigenbasis of the sampled graph, so both networks share taps and
    response family.
    """
    spec = signal.spec
    pts = sample_points(spec, n, seed)
    graph = build_graph(pts, plan.at(n, spec.intrinsic_dim))
    decomp = eig_sym(graph.L, n)
    out_g = gnn_forward(H, decomp, synthesize_signal(signal, pts), response="exponential")
    m_proj = m_proj or 4 * signal.bandlimit_index
    grid = quadrature_grid(spec, q or 64 * m_proj)
    out_m = mnn_forward(H, spec, signal, grid=grid, m_proj=m_proj, eval_params=pts.params)
    return float(np.mean(np.abs(out_g - out_m)))


def consistency_run(H: ParamSet, signal: BandlimitedSignal, plan: KernelPlan, n_values, trials,
                    master_seed=0, threads=1) -> dict:
    """Trial-mean MNN/GNN discrepancy for each n."""
    n_values = _check_sweep(n_values, trials)
    cells = [(n, t) for n in n_values for t in range(trials)]
    vals = _run_cells(lambda n, t: mnn_gnn_discrepancy(H, signal, n, plan,
                                                       derive_seed(master_seed, SAMPLE, t, n)),
                      cells, threads)
    return {n: float(np.mean([v for (m, _), v in zip(cells, vals) if m == n])) for n in n_values}
