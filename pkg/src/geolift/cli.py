"""Command-line entry points: gen, geodesics, fit, analyze, mesh, repro.

Every command takes an optional ``--config`` file (JSON or YAML) whose keys
mirror the nested defaults below; flags override the file. The effective
configuration is written to ``config.json`` in the output directory.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import io
from .analysis import decompose_charts, estimate_normals, normal_consistency
from .evaluation import N_EVAL, NORMAL_K, EvalReport, evaluate_embedding, ground_truth_normals
from .geodesic import GeodesicMatrix, NeighborGraph, all_pairs_geodesics, build_graph
from .geometry import SHAPE_KINDS, PointCloud, gen_shape, normalize_to_unit_box, sample_unit_ball
from .losses import LossWeights, chamfer
from .meshing import reconstruct_mesh, sample_mesh_surface
from .network import LiftedEmbedding
from .soft_geodesic import SoftGeodesicContext
from .training import DivergenceError, TrainingConfig, fit_object, geodesic_errors

logger = logging.getLogger("geolift")

OUTPUT_ENV = "GEOLIFT_OUTPUT_ROOT"

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 1, 2, 3

DEFAULTS = {
    "seed": 0,
    "output_dir": None,
    "shape": {"kind": "sphere", "n": 4096, "params": {}, "format": "ply"},
    "graph": {"k": 8, "min_normal_dot": None},
    "soft": {"k_lambda": 4, "bandwidth": None},
    "training": {
        "steps": 5000, "learning_rate": 1e-3, "lambda_c": 1.0, "lambda_g": 0.1,
        "pair_batch": 8192, "sample_batch": 2048, "hidden": [256, 256, 256],
        "lifting_dim": 16, "compute_dtype": "float32",
    },
    "charts": {"n_charts": 20, "res": 12, "steps": 100},
    "eval": {"n_eval": N_EVAL, "n_embed": 4096, "normal_k": NORMAL_K, "n_pairs": 1000},
    "inputs": {"cloud": None, "distances": None, "checkpoint": None},
}


class ConfigError(ValueError):
    pass


# --- configuration --------------------------------------------------------


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(out[key], dict) and key != "params":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _merge(out[key], value, where + ".")
        else:
            out[key] = value
    return out


def load_config(path=None, overrides=None):
    """Defaults, then the config file, then flag overrides (dotted keys)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path} does not exist")
        data = yaml.safe_load(p.read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        cfg = _merge(cfg, data)
    for dotted, value in (overrides or {}).items():
        node = cfg
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node[part]
        node[leaf] = value
    return cfg


def _output_dir(cfg, command):
    out = cfg["output_dir"] or os.path.join(os.environ.get(OUTPUT_ENV, "runs"), command)
    cfg["output_dir"] = str(out)
    Path(out).mkdir(parents=True, exist_ok=True)
    return Path(out)


def _echo(cfg, out):
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _require(cfg, *names):
    paths = []
    for name in names:
        value = cfg["inputs"][name]
        if value is None:
            raise ConfigError(f"missing input: --{name}")
        if not Path(value).exists():
            raise ConfigError(f"input {name} file {value} does not exist")
        paths.append(value)
    return paths


def training_config(cfg) -> TrainingConfig:
    t = cfg["training"]
    return TrainingConfig(
        steps=int(t["steps"]), learning_rate=float(t["learning_rate"]),
        weights=LossWeights(float(t["lambda_c"]), float(t["lambda_g"])),
        pair_batch=int(t["pair_batch"]), sample_batch=int(t["sample_batch"]),
        seed=int(cfg["seed"]), k_lambda=int(cfg["soft"]["k_lambda"]),
        bandwidth=cfg["soft"]["bandwidth"], hidden=tuple(t["hidden"]),
        lifting_dim=int(t["lifting_dim"]), compute_dtype=t["compute_dtype"],
    )


def _graph(cloud, cfg):
    g = cfg["graph"]
    return build_graph(cloud, k=int(g["k"]), min_normal_dot=g["min_normal_dot"])


def _normalized_context(cloud, D, cfg):
    """Normalize the cloud and carry the graph and distances into the same frame."""
    normed, box = normalize_to_unit_box(cloud)
    graph = _graph(cloud, cfg)
    if D.n != graph.n:
        raise ConfigError(f"distance matrix has {D.n} rows but the cloud has {graph.n} points")
    graph = NeighborGraph(box.apply(graph.vertex_positions), graph.adjacency / box.scale, graph.bridges)
    D = GeodesicMatrix(D.distances / box.scale)
    ctx = SoftGeodesicContext(graph, D, int(cfg["soft"]["k_lambda"]), cfg["soft"]["bandwidth"])
    return normed, box, ctx


def _embed(net, cfg):
    return LiftedEmbedding(net.forward(sample_unit_ball(int(cfg["eval"]["n_embed"]), cfg["seed"]).samples))


# --- commands -------------------------------------------------------------


def cmd_gen(cfg):
    out = _output_dir(cfg, "gen")
    s = cfg["shape"]
    cloud = gen_shape(s["kind"], s["params"], n=int(s["n"]), seed=int(cfg["seed"]))
    if s["format"] not in ("ply", "xyz"):
        raise ConfigError("shape.format must be 'ply' or 'xyz'")
    path = out / f"cloud.{s['format']}"
    io.write_cloud(path, cloud)
    _echo(cfg, out)
    logger.info("wrote %d points to %s", len(cloud), path)
    return {"cloud": str(path)}


def cmd_geodesics(cfg):
    (cloud_path,) = _require(cfg, "cloud")
    out = _output_dir(cfg, "geodesics")
    cloud = io.read_cloud(cloud_path)
    graph = _graph(cloud, cfg)
    if graph.bridges:
        logger.warning("added %d bridge edges to connect the graph", graph.bridges)
    D = all_pairs_geodesics(graph)
    path = out / "distances.ghofdm"
    io.write_distance_matrix(path, D)
    off = D.distances[~np.eye(D.n, dtype=bool)]
    summary = {
        "n": D.n, "k": int(cfg["graph"]["k"]), "min_normal_dot": cfg["graph"]["min_normal_dot"],
        "bridges": graph.bridges,
        "min_distance": float(off.min()) if off.size else 0.0,
        "max_distance": float(D.distances.max()),
    }
    _write_json(out / "geodesics.json", summary)
    _echo(cfg, out)
    return {"distances": str(path), **summary}


def cmd_fit(cfg):
    cloud_path, dm_path = _require(cfg, "cloud", "distances")
    out = _output_dir(cfg, "fit")
    cloud = io.read_cloud(cloud_path)
    normed, box, ctx = _normalized_context(cloud, io.read_distance_matrix(dm_path), cfg)
    tcfg = training_config(cfg)
    net, trace = fit_object(normed, ctx, tcfg)
    # export what the checkpoint stores, so a reload reproduces the embedding
    net = io.quantize(net)
    sidecar = {"seed": tcfg.seed, "training": tcfg.to_dict(), "box_center": box.center.tolist(),
               "box_scale": box.scale, "n_embed": int(cfg["eval"]["n_embed"])}
    sidecar["training"]["weights"] = {"lambda_c": tcfg.weights.lambda_c, "lambda_g": tcfg.weights.lambda_g}
    io.write_checkpoint(out / "model.ghofnn", net, sidecar)
    _write_json(out / "trace.json", [r.to_dict() for r in trace])
    io.write_embedding(out / "embedding.txt", _embed(net, cfg).rows)
    _echo(cfg, out)
    return {"checkpoint": str(out / "model.ghofnn"), "first_total": trace[0].total,
            "last_total": trace[-1].total}


def _load_eval_inputs(cfg):
    ckpt, cloud_path = _require(cfg, "checkpoint", "cloud")
    net = io.read_checkpoint(ckpt)
    gt, _ = normalize_to_unit_box(io.read_cloud(cloud_path))
    return net, gt


def cmd_analyze(cfg):
    net, gt = _load_eval_inputs(cfg)
    out = _output_dir(cfg, "analyze")
    Z = LiftedEmbedding(net.forward(sample_unit_ball(int(cfg["eval"]["n_eval"]), cfg["seed"]).samples))
    report = evaluate_embedding(Z, gt, k=int(cfg["eval"]["normal_k"]), seed=int(cfg["seed"]))
    if cfg["inputs"]["distances"] is not None:
        (dm_path,) = _require(cfg, "distances")
        raw_cloud = io.read_cloud(cfg["inputs"]["cloud"])
        _, _, ctx = _normalized_context(raw_cloud, io.read_distance_matrix(dm_path), cfg)
        errs = geodesic_errors(net, ctx, n_pairs=int(cfg["eval"]["n_pairs"]), seed=int(cfg["seed"]))
        report.geodesic_mre = float(errs.mean())
    geo_normals = estimate_normals(Z.X, int(cfg["eval"]["normal_k"]), features=Z)
    charts = None
    if gt.labels is not None:
        charts = decompose_charts(Z.W, len(np.unique(gt.labels)), seed=int(cfg["seed"])).labels
    io.write_ply(out / "analysis.ply", PointCloud(Z.X, geo_normals), chart=charts)
    report.stamp(cfg["seed"], cfg)
    _write_json(out / "report.json", report.to_dict())
    _echo(cfg, out)
    return report.to_dict()


def cmd_mesh(cfg):
    net, gt = _load_eval_inputs(cfg)
    out = _output_dir(cfg, "mesh")
    c = cfg["charts"]
    Z = _embed(net, cfg)
    rec = reconstruct_mesh(Z, n_charts=int(c["n_charts"]), res=int(c["res"]), steps=int(c["steps"]),
                           seed=int(cfg["seed"]), n_eval=int(cfg["eval"]["n_eval"]))
    io.write_obj(out / "mesh.obj", rec.mesh)
    samples = sample_mesh_surface(rec.mesh, int(cfg["eval"]["n_eval"]), seed=int(cfg["seed"]))
    raw = chamfer(samples.points, gt.points)
    report = EvalReport.from_chamfer(
        raw, gt.points, normal_consistency=normal_consistency(ground_truth_normals(gt), samples),
        extra={"charts": len(rec.charts), "skipped": rec.skipped,
               "embedding_chamfer_raw": chamfer(Z.X, gt.points),
               "chart_traces": {s.chart_id: [s.fit_trace[0], s.fit_trace[-1]] for s in rec.charts}},
    )
    report.stamp(cfg["seed"], cfg)
    _write_json(out / "report.json", report.to_dict())
    _echo(cfg, out)
    return report.to_dict()


def cmd_repro(cfg, suite):
    from .repro import SUITES, format_table, run_suite

    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; available: {', '.join(sorted(SUITES))}")
    out = _output_dir(cfg, "repro")
    results = run_suite(suite)
    table = format_table(results)
    print(table)
    (out / "summary.txt").write_text(table + "\n")
    _write_json(out / "summary.json", [r.to_dict() for r in results])
    return results


# --- argument parsing -----------------------------------------------------


def _kv(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key, float(value)


def _flag(p, name, dest, **kw):
    p.add_argument(name, dest=dest, default=argparse.SUPPRESS, **kw)


class _Parser(argparse.ArgumentParser):
    """Usage errors are validation errors: exit 1 rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="geolift", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON or YAML config file")
        _flag(p, "--output", "output_dir", help=f"output directory (default ${OUTPUT_ENV}/<command>)")
        _flag(p, "--seed", "seed", type=int)

    p = sub.add_parser("gen", help="sample a synthetic shape")
    common(p)
    _flag(p, "--kind", "shape.kind", help=f"one of {', '.join(SHAPE_KINDS)}")
    _flag(p, "--n", "shape.n", type=int)
    _flag(p, "--format", "shape.format", choices=("ply", "xyz"))
    p.add_argument("--param", type=_kv, action="append", default=[], help="shape parameter KEY=VALUE")

    def graph_flags(p):
        _flag(p, "--k", "graph.k", type=int, help="k-NN graph neighbors")
        _flag(p, "--min-normal-dot", "graph.min_normal_dot", type=float,
              help="drop graph edges whose normals disagree more than this")

    p = sub.add_parser("geodesics", help="k-NN graph geodesics of a cloud")
    common(p)
    _flag(p, "--cloud", "inputs.cloud")
    graph_flags(p)

    p = sub.add_parser("fit", help="fit the mapping network to a cloud")
    common(p)
    _flag(p, "--cloud", "inputs.cloud")
    _flag(p, "--distances", "inputs.distances")
    graph_flags(p)
    _flag(p, "--steps", "training.steps", type=int)
    _flag(p, "--learning-rate", "training.learning_rate", type=float)
    _flag(p, "--lambda-c", "training.lambda_c", type=float)
    _flag(p, "--lambda-g", "training.lambda_g", type=float)
    _flag(p, "--sample-batch", "training.sample_batch", type=int)
    _flag(p, "--pair-batch", "training.pair_batch", type=int)
    _flag(p, "--lifting-dim", "training.lifting_dim", type=int)
    _flag(p, "--k-lambda", "soft.k_lambda", type=int)
    _flag(p, "--n-embed", "eval.n_embed", type=int)

    p = sub.add_parser("analyze", help="evaluate a checkpoint against a ground-truth cloud")
    common(p)
    _flag(p, "--checkpoint", "inputs.checkpoint")
    _flag(p, "--cloud", "inputs.cloud")
    _flag(p, "--distances", "inputs.distances")
    graph_flags(p)
    _flag(p, "--n-eval", "eval.n_eval", type=int)

    p = sub.add_parser("mesh", help="chart-based mesh from a checkpoint")
    common(p)
    _flag(p, "--checkpoint", "inputs.checkpoint")
    _flag(p, "--cloud", "inputs.cloud")
    _flag(p, "--n-charts", "charts.n_charts", type=int)
    _flag(p, "--res", "charts.res", type=int)
    _flag(p, "--chart-steps", "charts.steps", type=int)
    _flag(p, "--n-embed", "eval.n_embed", type=int)
    _flag(p, "--n-eval", "eval.n_eval", type=int)

    p = sub.add_parser("repro", help="run an acceptance suite")
    common(p)
    p.add_argument("suite", nargs="?", help="suite name; omit to list suites")
    return parser


COMMANDS = {"gen": cmd_gen, "geodesics": cmd_geodesics, "fit": cmd_fit,
            "analyze": cmd_analyze, "mesh": cmd_mesh}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if "." in k or k in ("seed", "output_dir")}
    if getattr(args, "param", None):
        overrides["shape.params"] = dict(args.param)
    try:
        with threadpool_limits(limits=args.threads):
            cfg = load_config(args.config, overrides)
            if args.command == "repro":
                from .repro import SUITES

                if args.suite is None:
                    print("available suites: " + ", ".join(sorted(SUITES)))
                    return EXIT_OK
                results = cmd_repro(cfg, args.suite)
                return EXIT_OK if all(r.passed for r in results) else EXIT_ACCEPTANCE
            result = COMMANDS[args.command](cfg)
            print(json.dumps(result, indent=2, sort_keys=True, default=str))
            return EXIT_OK
    except (DivergenceError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
