"""Command-line entry point.

    manigap <command> [--config PATH] [--out DIR] [--seed INT] [--threads INT]

Exit status is 0 on success, 1 for invalid input or configuration and 2 for
runtime or numerical failures. Errors are printed to stderr as
``ERROR <code>: <message>``.
"""
from __future__ import annotations

import argparse
import os
import sys

from . import config as cfgmod
from .errors import (ConfigError, InvalidArgument, InvalidMesh, ManigapError, ParseError,
                     Unsupported)
from .graph import KernelPlan, build_graph, write_edge_csv, write_laplacian_csv
from .harness import (INPUT_SHAPES, SAMPLE, ConstantSignal, CoordinateSignal, ExactMNN,
                      FreshGraph, GraphTask, derive_seed, eig_convergence_run, graph_sweep,
                      make_node_task, node_sweep, regularizer_sweep)
from .manifold import BandlimitedSignal, ManifoldSpec, VonMises, sample_points
from .mesh import load_off_mesh
from .neural import Architecture, TrainConfig
from .report import emit_report, manifest_text, write_atomic
from .spectral import eig_sym, write_spectrum_csv

VALIDATION = (ConfigError, InvalidArgument, ParseError, InvalidMesh, Unsupported)


def manifold_from(cfg) -> ManifoldSpec:
    kind = cfg["manifold.kind"]
    if kind == "mesh":
        return ManifoldSpec.mesh_cloud(load_off_mesh(cfg["manifold.mesh"]))
    if kind == "torus":
        return ManifoldSpec.torus(*cfg["manifold.radii"])
    density = VonMises(cfg["manifold.vm_location"], cfg["manifold.vm_concentration"]) \
        if cfg["manifold.density"] == "vonmises" else None
    return ManifoldSpec.circle(cfg["manifold.radii"][0], density) if density else \
        ManifoldSpec.circle(cfg["manifold.radii"][0])


def plan_from(cfg) -> KernelPlan:
    eps = cfg["kernel.epsilon"] if cfg["kernel.mode"] == "fixed" else None
    return KernelPlan(cfg["kernel.kind"], eps, cfg["kernel.delta"], cfg["kernel.c"])


def arch_from(cfg, out_features=1) -> Architecture:
    return Architecture.uniform(cfg["architecture.layers"], cfg["architecture.width"],
                                cfg["architecture.taps"], cfg["architecture.activation"],
                                out_features=out_features)


def train_from(cfg) -> TrainConfig:
    return TrainConfig(cfg["training.lr"], cfg["training.beta1"], cfg["training.beta2"],
                       cfg["training.epochs"], cfg["training.batch_size"], cfg["training.reg_weight"],
                       cfg["task.loss"], cfg["run.seed"])


def _classes(cfg, count):
    return count if cfg["task.loss"] == "ce" else 1


def graph_task_from(cfg) -> GraphTask:
    labels = cfg["graph.labels"]
    if cfg["graph.meshes"]:
        specs = [ManifoldSpec.mesh_cloud(load_off_mesh(p)) for p in cfg["graph.meshes"]]
    else:
        specs = [ManifoldSpec.circle(r) for r in cfg["graph.radii"]]
    entries = []
    for spec, kind, y in zip(specs, cfg["graph.inputs"], labels):
        if kind in ("x", "y", "z"):
            sig = CoordinateSignal("xyz".index(kind))
        elif kind == "constant":
            sig = ConstantSignal(1.0) if spec.kind == "mesh" else BandlimitedSignal(INPUT_SHAPES[kind], spec)
        elif kind == "harmonic" and spec.kind != "mesh":
            sig = BandlimitedSignal(INPUT_SHAPES[kind], spec)
        else:
            raise ConfigError(f"graph.inputs value {kind!r} is not available on {spec.kind} manifolds",
                              key="graph.inputs")
        if cfg["task.loss"] == "ce" and (y != int(y) or not 0 <= y < len(labels)):
            raise ConfigError("with task.loss = ce, graph.labels must be class indices 0..K-1",
                              key="graph.labels")
        entries.append((spec, sig, y))
    return GraphTask(tuple(entries))


def node_task_from(cfg, spec):
    return make_node_task(spec, cfg["task.input_coeffs"], cfg["task.target_coeffs"], cfg["task.normalize_input"])


def estimator_from(cfg, plan):
    if cfg["sweep.estimator"] == "exact":
        return ExactMNN()
    return FreshGraph(cfg["sweep.eval_n"], plan, response=cfg["kernel.response"])


def cmd_build_graph(cfg, out):
    spec = manifold_from(cfg)
    plan = plan_from(cfg)
    paths = []
    for n in cfg["sweep.n_values"]:
        pts = sample_points(spec, n, derive_seed(cfg["run.seed"], SAMPLE, 0, n))
        graph = build_graph(pts, plan.at(n, spec.intrinsic_dim), threads=cfg["run.threads"])
        p = os.path.join(out, f"points_n{n}.csv")
        cols = ",".join(f"x{j}" for j in range(pts.points.shape[1]))
        write_atomic(p, cols + "\n" + "".join(",".join(f"{v:.17g}" for v in row) + "\n" for row in pts.points))
        paths.append(p)
        p = os.path.join(out, f"edges_n{n}.csv")
        write_edge_csv(graph, p)
        paths.append(p)
        if n <= 2048:
            p = os.path.join(out, f"laplacian_n{n}.csv")
            write_laplacian_csv(graph, p)
            paths.append(p)
        p = os.path.join(out, f"spectrum_n{n}.csv")
        write_spectrum_csv(eig_sym(graph.L, min(cfg["sweep.i_max"], n)), p)
        paths.append(p)
    paths.append(write_atomic(os.path.join(out, "manifest.txt"), manifest_text(cfg)))
    return paths


def cmd_eig_check(cfg, out):
    spec = manifold_from(cfg)
    plan = plan_from(cfg)
    table = eig_convergence_run(spec, plan.kind, cfg["sweep.n_values"], cfg["sweep.trials"],
                                cfg["sweep.i_max"], plan.delta, plan.c, cfg["run.seed"],
                                cfg["run.threads"], plan.epsilon)
    return emit_report(table, out, cfg, name="eig")


def cmd_node_gap(cfg, out):
    spec = manifold_from(cfg)
    plan = plan_from(cfg)
    report = node_sweep(node_task_from(cfg, spec), arch_from(cfg, _classes(cfg, 2)), plan,
                        cfg["sweep.n_values"], cfg["sweep.trials"], train_from(cfg),
                        cfg["training.weights"], estimator_from(cfg, plan), cfg["run.seed"],
                        cfg["run.threads"], cfg["kernel.response"])
    return emit_report(report, out, cfg, name="node")


def cmd_graph_gap(cfg, out):
    task = graph_task_from(cfg)
    report = graph_sweep(task, arch_from(cfg, _classes(cfg, task.count)), plan_from(cfg),
                         cfg["sweep.n_values"], cfg["sweep.trials"], train_from(cfg),
                         cfg["sweep.eval_n"], cfg["training.weights"], cfg["run.seed"],
                         cfg["run.threads"], cfg["kernel.response"])
    return emit_report(report, out, cfg, name="graph")


def cmd_reg_sweep(cfg, out):
    spec = manifold_from(cfg)
    plan = plan_from(cfg)
    reports = regularizer_sweep(node_task_from(cfg, spec), arch_from(cfg, _classes(cfg, 2)), plan,
                                cfg["sweep.n_values"], cfg["sweep.mu_values"], cfg["sweep.trials"],
                                train_from(cfg), estimator_from(cfg, plan), cfg["run.seed"],
                                cfg["run.threads"], cfg["kernel.response"])
    paths = []
    for mu, rep in reports.items():
        paths += emit_report(rep, out, None, name=f"reg_mu{mu!r}")
    rows = ["mu,n,reg_value_mean,gap_mean"]
    for mu, rep in reports.items():
        rows += [f"{mu!r},{n},{rep.mean_of('reg_value', n):.17g},{g:.17g}"
                 for n, g in zip(rep.n_values, rep.gap_mean)]
    paths.append(write_atomic(os.path.join(out, "reg_overview.csv"), "\n".join(rows) + "\n"))
    paths.append(write_atomic(os.path.join(out, "manifest.txt"), manifest_text(cfg)))
    return paths


COMMANDS = {
    "build-graph": cmd_build_graph,
    "eig-check": cmd_eig_check,
    "node-gap": cmd_node_gap,
    "graph-gap": cmd_graph_gap,
    "reg-sweep": cmd_reg_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="manigap", description="Generalization-gap experiments on manifold graphs.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="config file (section.key = value lines); defaults if omitted")
    ap.add_argument("--out", default="out", help="output directory (default: out)")
    ap.add_argument("--seed", type=int, help="master seed, overrides run.seed")
    ap.add_argument("--threads", type=int, help="worker threads, overrides run.threads")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config, args.command) if args.config else cfgmod.defaults(args.command)
        overrides = {}
        if args.seed is not None:
            overrides["run__seed"] = args.seed
        if args.threads is not None:
            overrides["run__threads"] = args.threads
        if overrides:
            if args.seed is not None and args.seed < 0:
                raise ConfigError("--seed must be >= 0", key="run.seed")
            if args.threads is not None and args.threads < 1:
                raise ConfigError("--threads must be >= 1", key="run.threads")
            cfg = cfg.with_values(**overrides)
        paths = COMMANDS[args.command](cfg, args.out)
    except VALIDATION as exc:
        print(f"ERROR {exc.code}: {exc}", file=sys.stderr)
        return 1
    except ManigapError as exc:
        print(f"ERROR {exc.code}: {exc}", file=sys.stderr)
        return 2
    except (MemoryError, OSError, ArithmeticError) as exc:
        print(f"ERROR runtime-error: {exc}", file=sys.stderr)
        return 2
    for p in paths:
        print(p)
    return 0


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
