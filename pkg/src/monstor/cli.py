"""Command-line entry point.

Query commands (simulate, exact, estimate, maximize) run in-process by default
or against a running service with ``--server URL``; both paths share the
output formatting, so results are identical.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import commands

log = logging.getLogger("monstor")


def _post(server: str, route: str, payload: dict) -> dict:
    import httpx

    r = httpx.post(server.rstrip("/") + route, json=payload, timeout=None)
    if r.status_code != 200:
        detail = r.json().get("detail", r.text) if r.headers.get("content-type", "").startswith(
            "application/json") else r.text
        raise SystemExit(f"error: server returned {r.status_code}: {detail}")
    return r.json()


def _query(args, route: str, fn, payload: dict) -> dict:
    if args.server:
        for key in ("graph", "model"):
            if payload.get(key):
                payload[key] = os.path.abspath(payload[key])
        return _post(args.server, route, payload)
    return fn(**payload)


def _write_vector(path, final: dict, meta: dict) -> None:
    from .evaluation import write_tsv

    write_tsv(path, ["node", "probability"], list(final.items()), meta)


def _print_pairs(pairs) -> None:
    for k, v in pairs:
        print(f"{k}\t{v!r}" if isinstance(v, float) else f"{k}\t{v}")


def _sidecar(path: str) -> str:
    p = Path(path)
    name = p.name
    for suffix in (".edges.tsv", ".tsv", ".txt"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
            break
    return str(p.with_name(name + ".nodes.tsv"))


# ---------------------------------------------------------------------------
# commands

def cmd_rmat(args):
    from .graph import assign_weighted_cascade, generate_rmat, load_edge_list, write_edge_list

    g = generate_rmat(args.log2_edges, args.a, args.b, args.c, args.d, seed=args.seed)
    if not args.zero_probs:
        g = assign_weighted_cascade(g)
    header = (f"rmat log2_edges={args.log2_edges} a={args.a} b={args.b} c={args.c} d={args.d} "
              f"seed={args.seed} nodes={g.node_count} edges={g.edge_count}")
    write_edge_list(g, args.out, header)
    load_edge_list(args.out, node_map=_sidecar(args.out))
    print(f"nodes\t{g.node_count}\nedges\t{g.edge_count}")


def cmd_build_probs(args):
    from .graph import load_edge_list, write_edge_list
    from .probs import build_probs, mean_edge_probability, read_action_log

    logf = read_action_log(args.log)
    train_log, test_log = logf.split(args.split_at)
    nodes = logf.nodes()
    for part, sub in (("train", train_log), ("test", test_log)):
        g = build_probs(sub, args.measure, nodes=nodes)
        out = f"{args.out}.{part}.edges.tsv"
        if g.edge_count == 0:
            raise SystemExit(f"error: {part} split has no edges")
        write_edge_list(g, out, f"measure={args.measure} split={part} split_at={args.split_at} "
                                f"records={len(sub.records)}")
        load_edge_list(out, node_map=_sidecar(out))
        print(f"{part}\tedges={g.edge_count}\tmean_p={mean_edge_probability(g)!r}")


def cmd_simulate(args):
    seeds = commands.parse_seed_text(args.seeds)
    res = _query(args, "/simulate", commands.run_simulate,
                 dict(graph=args.graph, seeds=seeds, runs=args.runs, seed=args.seed,
                      workers=args.workers, vectors=bool(args.out)))
    _print_pairs([("influence", res["influence"]), ("stderr", res["stderr"]),
                  ("runs", res["runs"]), ("steps", res["steps"])])
    if args.out:
        _write_vector(args.out, res["final"], {"command": "simulate", "graph": args.graph,
                                               "seeds": args.seeds, "runs": args.runs,
                                               "seed": args.seed, "workers": args.workers})


def cmd_exact(args):
    seeds = commands.parse_seed_text(args.seeds)
    res = _query(args, "/exact", commands.run_exact,
                 dict(graph=args.graph, seeds=seeds, vectors=bool(args.out)))
    _print_pairs([("influence", res["influence"]), ("steps", res["steps"])])
    if args.out:
        _write_vector(args.out, res["final"], {"command": "exact", "graph": args.graph,
                                               "seeds": args.seeds})


def cmd_estimate(args):
    seeds = commands.parse_seed_text(args.seeds)
    res = _query(args, "/estimate", commands.run_estimate,
                 dict(graph=args.graph, model=args.model, seeds=seeds, s=args.s,
                      vectors=bool(args.vector or args.out)))
    _print_pairs([("influence", res["influence"]), ("stacks", res["stacks"])])
    if args.vector:
        _print_pairs(res["final"].items())
    if args.out:
        _write_vector(args.out, res["final"], {"command": "estimate", "graph": args.graph,
                                               "model": args.model, "seeds": args.seeds,
                                               "s": res["stacks"]})


def cmd_maximize(args):
    res = _query(args, "/maximize", commands.run_maximize,
                 dict(graph=args.graph, k=args.k, backend=args.backend, model=args.model,
                      runs=args.runs, seed=args.seed, workers=args.workers,
                      algorithm=args.algorithm))
    print("rank\tnode\tgain")
    for i, (node, gain) in enumerate(res["trace"], 1):
        print(f"{i}\t{node}\t{gain!r}")
    print(f"influence\t{res['influence']!r}\nevaluations\t{res['evaluations']}")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            for node in res["seeds"]:
                fh.write(f"{node}\n")
            fh.write(f"# influence {res['influence']!r} backend {res['backend']}\n")


def cmd_gen_tuples(args):
    from .cascade import generate_tuples, save_tuples

    g = commands.load_graph(args.graph)
    gid = args.graph_id or os.path.basename(args.graph)
    tuples = generate_tuples(g, args.count, args.e, args.runs, args.seed, gid, args.workers)
    save_tuples(args.out, tuples)
    print(f"tuples\t{len(tuples)}\tgraph\t{gid}\tnodes\t{g.node_count}")


def cmd_train(args):
    from .cascade import load_tuples
    from .evaluation import write_tsv
    from .model import save_model
    from .train import TrainConfig, train

    tuples = []
    for f in args.tuples.split(","):
        tuples.extend(load_tuples(f.strip()))
    graphs = {}
    for gid in sorted({t.graph_id for t in tuples}):
        path = os.path.join(args.graphs, gid)
        if not os.path.exists(path):
            raise SystemExit(f"error: graph {gid!r} not found in {args.graphs}")
        graphs[gid] = commands.load_graph(path)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
                      val_frac=args.val_frac, optimizer=args.optimizer, hidden=args.hidden,
                      layers=args.layers, lam=args.lam, pad=args.pad, s_max=args.s_max,
                      val_sets_per_graph=args.val_sets, val_runs=args.val_runs)
    params, rep = train(tuples, graphs, cfg)
    save_model(params, args.out)
    print(f"best_epoch\t{rep.best_epoch}\ns\t{params.s}")
    if args.report:
        rows = [("epoch", t, tr, va) for t, (tr, va) in
                enumerate(zip(rep.train_loss, rep.val_loss), 1)]
        rows += [("stack", s, score, "") for s, score in sorted(rep.s_scores.items())]
        write_tsv(args.report, ["kind", "index", "value", "val_loss"], rows,
                  {"command": "train", **vars(cfg)})


def cmd_eval(args):
    from .evaluation import (run_ie_eval, run_scalability, submodularity_probe, write_tsv)

    if args.which == "ie":
        g = commands.load_graph(args.graph)
        rep = run_ie_eval(g, commands.load_checkpoint(args.model), args.sets, args.runs,
                          args.seed, args.workers)
        print(f"pearson\t{rep.pearson!r}\nspearman\t{rep.spearman!r}\nn\t{rep.n}")
        if args.out:
            meta = {"command": "eval ie", "graph": args.graph, "model": args.model,
                    "sets": args.sets, "runs": args.runs, "seed": args.seed,
                    "pearson": repr(rep.pearson), "spearman": repr(rep.spearman)}
            write_tsv(args.out, ["set", "mc", "surrogate"],
                      [(i, t, e) for i, (t, e) in enumerate(zip(rep.truth, rep.estimate))], meta)
    elif args.which == "submod":
        g = commands.load_graph(args.graph)
        f = commands.make_influence(g, args.backend, args.model, args.runs, args.seed, args.workers)
        rep = submodularity_probe(g, f, args.pairs, (args.min_frac, args.max_frac), args.seed)
        mape = "" if rep.violation_mape is None else repr(rep.violation_mape)
        print(f"pairs\t{rep.pairs_tested}\nholds\t{rep.holds}\nholds_ratio\t{rep.holds_ratio!r}\n"
              f"violation_mape\t{mape or 'n/a'}")
        if args.out:
            write_tsv(args.out, ["pairs", "holds", "holds_ratio", "violation_mape"],
                      [(rep.pairs_tested, rep.holds, rep.holds_ratio, mape)],
                      {"command": "eval submod", "graph": args.graph, "backend": f.describe(),
                       "seed": args.seed, "size_range": f"{args.min_frac},{args.max_frac}"})
    else:
        rows = run_scalability(range(args.min_log2, args.max_log2 + 1), args.estimations,
                               commands.load_checkpoint(args.model), args.seed,
                               repeats=args.repeats)
        print("log2_edges\tnodes\tedges\tseconds_per_stack")
        for r in rows:
            print(f"{r.log2_edges}\t{r.nodes}\t{r.edges}\t{r.seconds:.4f}")
        if args.out:
            write_tsv(args.out, ["log2_edges", "nodes", "edges", "estimations", "stacks",
                                 "seconds_per_stack"],
                      [(r.log2_edges, r.nodes, r.edges, r.estimations, r.stacks, r.seconds)
                       for r in rows],
                      {"command": "eval scale", "model": args.model, "seed": args.seed,
                       "estimations": args.estimations})


def cmd_serve(args):
    import uvicorn

    uvicorn.run("monstor.service:app", host=args.host, port=args.port, log_level="warning")


# ---------------------------------------------------------------------------
# parser

def _graph_seed_args(p, seeds=True):
    p.add_argument("--graph", required=True, help="edge-list file")
    if seeds:
        p.add_argument("--seeds", required=True, help='comma-separated node labels, e.g. "1,5,9"')


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="monstor", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--server", help="send query commands to a running service at this URL")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rmat", help="generate an R-MAT graph with weighted-cascade probabilities")
    p.add_argument("--log2-edges", type=int, required=True)
    for name, default in (("a", 0.7), ("b", 0.1), ("c", 0.1), ("d", 0.1)):
        p.add_argument(f"--{name}", type=float, default=default)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--zero-probs", action="store_true", help="skip weighted-cascade weighting")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_rmat)

    p = sub.add_parser("build-probs", help="activation probabilities from an action log")
    p.add_argument("--log", required=True)
    p.add_argument("--measure", choices=("bt", "ji", "lp"), required=True)
    p.add_argument("--split-at", type=float, default=0.5)
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(fn=cmd_build_probs)

    p = sub.add_parser("simulate", help="Monte Carlo influence")
    _graph_seed_args(p)
    p.add_argument("--runs", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="write the final infection vector as TSV")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("exact", help="exact influence by live-edge enumeration (small graphs)")
    _graph_seed_args(p)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_exact)

    p = sub.add_parser("gen-tuples", help="simulate random seed sets and collect training tuples")
    _graph_seed_args(p, seeds=False)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--e", type=int, default=4)
    p.add_argument("--runs", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--graph-id", help="id stored in the tuples (default: graph file name)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_tuples)

    p = sub.add_parser("train", help="train the step estimator")
    p.add_argument("--tuples", required=True, help="comma-separated tuple files")
    p.add_argument("--graphs", required=True, help="directory holding the graphs named in the tuples")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--val-frac", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--lam", type=float, default=0.3)
    p.add_argument("--pad", choices=("zero", "seed"), default="zero")
    p.add_argument("--s-max", type=int, default=8)
    p.add_argument("--val-sets", type=int, default=50, help="seed sets per graph for choosing s")
    p.add_argument("--val-runs", type=int, default=10_000)
    p.add_argument("--report", help="write per-epoch losses and stack scores as TSV")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("estimate", help="surrogate influence of a seed set")
    _graph_seed_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--s", type=int, help="stack count (default: the checkpoint's)")
    p.add_argument("--vector", action="store_true", help="also print per-node probabilities")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("maximize", help="greedy seed selection")
    _graph_seed_args(p, seeds=False)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--backend", choices=commands.BACKENDS, default="mc")
    p.add_argument("--model")
    p.add_argument("--runs", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--algorithm", choices=commands.ALGORITHMS, default="lazy")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_maximize)

    p = sub.add_parser("eval", help="evaluation experiments")
    ev = p.add_subparsers(dest="which", required=True)
    q = ev.add_parser("ie", help="surrogate vs Monte Carlo correlation")
    _graph_seed_args(q, seeds=False)
    q.add_argument("--model", required=True)
    q.add_argument("--sets", type=int, default=200)
    q.add_argument("--runs", type=int, default=10_000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--workers", type=int, default=1)
    q.add_argument("--out", help="scatter TSV")
    q.set_defaults(fn=cmd_eval)
    q = ev.add_parser("submod", help="empirical submodularity of an influence function")
    _graph_seed_args(q, seeds=False)
    q.add_argument("--backend", choices=commands.BACKENDS, default="surrogate")
    q.add_argument("--model")
    q.add_argument("--pairs", type=int, default=200)
    q.add_argument("--min-frac", type=float, default=0.0)
    q.add_argument("--max-frac", type=float, default=0.1)
    q.add_argument("--runs", type=int, default=10_000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--workers", type=int, default=1)
    q.add_argument("--out")
    q.set_defaults(fn=cmd_eval)
    q = ev.add_parser("scale", help="inference time on growing R-MAT graphs")
    q.add_argument("--model", required=True)
    q.add_argument("--min-log2", type=int, default=14)
    q.add_argument("--max-log2", type=int, default=18)
    q.add_argument("--estimations", type=int, default=100)
    q.add_argument("--repeats", type=int, default=1)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out")
    q.set_defaults(fn=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {commands.error_message(exc)}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
