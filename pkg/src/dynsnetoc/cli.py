"""Command-line surface.

Subcommands: simulate, infer, ppc, stats, sparsity-scan, tail-fit,
export-affiliations, export-sankey, ingest.  Exit codes: 0 success,
2 usage/config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import graph_io
from .errors import (
    DataFormatError,
    InsufficientDataError,
    NumericError,
    ParameterError,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _fmt(x):
    return f"{float(x):.17g}"


def _load_run_config(args):
    if not args.config:
        raise DataFormatError("this subcommand requires --config")
    path = Path(args.config)
    if not path.exists():
        raise DataFormatError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON: {exc}") from None
    graph_io.apply_overrides(doc, args.set or [])
    unknown = set(doc) - {"model", "sim", "infer", "output"}
    if unknown:
        raise DataFormatError(f"{path}: unknown config sections {sorted(unknown)}")
    return graph_io.RunConfig(**{k: doc.get(k, {})
                                 for k in ("model", "sim", "infer", "output")})


def _out_dir(cfg, args):
    d = Path(args.out) if getattr(args, "out", None) else Path(cfg.output["directory"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_simulate(args):
    cfg = _load_run_config(args)
    out = _out_dir(cfg, args)
    from .generator import simulate
    state, graph = simulate(cfg.sim_config())
    graph_io.save_graph(graph, out / "graph.edges")
    graph_io.save_latent_state(state, out / "latent_state.csv")
    print(f"simulated {graph.num_nodes} nodes over {graph.num_timesteps} "
          f"timesteps -> {out}")
    return EXIT_OK


def cmd_infer(args):
    cfg = _load_run_config(args)
    out = _out_dir(cfg, args)
    graph = graph_io.load_graph(args.graph)
    inf_cfg = cfg.inference_config()
    n_chains = int(cfg.infer["chains"])
    from .inference import run_chains
    chains = run_chains(graph, inf_cfg, n_chains, parallel=not args.sequential)
    diag = []
    for idx, chain in enumerate(chains):
        graph_io.save_draws(chain, out / f"draws_chain{idx}.csv")
        diag.append({
            "chain": idx,
            "seed": chain.seed,
            "draws": len(chain),
            "accept_stat": chain.accept_stat,
            "divergences": chain.divergences,
            "step_size": chain.step_size,
            "mass_diag_min": float(chain.mass_diag.min()),
            "mass_diag_max": float(chain.mass_diag.max()),
        })
    _write_json(diag, out / "diagnostics.json")
    print(f"wrote {n_chains} chain(s) to {out}")
    return EXIT_OK


def cmd_ppc(args):
    cfg = _load_run_config(args)
    out = _out_dir(cfg, args)
    graph = graph_io.load_graph(args.graph)
    from .diagnostics import posterior_predictive
    chain = graph_io.load_draws(args.draws)
    env = posterior_predictive(chain, graph, n_rep=args.replicates,
                               seed=int(cfg.infer["seed"]))
    path = out / "ppc_envelope.csv"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,degree,lower,upper,empirical\n")
        for t in range(1, chain.layout.T + 1):
            js = env.degrees[t - 1]
            for idx, j in enumerate(js):
                fh.write(f"{t},{j},{_fmt(env.lower[t - 1][idx])},"
                         f"{_fmt(env.upper[t - 1][idx])},"
                         f"{_fmt(env.empirical[t - 1][idx])}\n")
    cov = {str(t): env.fraction_covered(t) for t in range(1, chain.layout.T + 1)}
    _write_json(cov, out / "ppc_coverage.json")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_stats(args):
    graph = graph_io.load_graph(args.graph)
    from .diagnostics import summary_stats
    rows = []
    for t in range(1, graph.num_timesteps + 1):
        st = summary_stats(graph, t)
        rows.append({
            "t": t,
            "active_nodes": st.active_count,
            "edges": st.edge_count,
            "max_degree": int(st.degrees.max()) if st.degrees.size else 0,
            "degree_freq": {str(k): v for k, v in sorted(st.degree_freq.items())},
        })
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(rows, out / "stats.json")
        print(f"wrote {out / 'stats.json'}")
    else:
        json.dump(rows, sys.stdout, indent=2, sort_keys=True)
        print()
    return EXIT_OK


def cmd_sparsity_scan(args):
    cfg = _load_run_config(args)
    out = _out_dir(cfg, args)
    from .diagnostics import sparsity_scan
    alphas = [float(a) for a in args.alphas.split(",")]
    res = sparsity_scan(cfg.hyperparams(), alphas, args.seeds,
                        float(cfg.sim["epsilon"]),
                        base_seed=int(cfg.sim["seed"]))
    with open(out / "sparsity_points.csv", "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("alpha,seed,active_nodes,edges\n")
        for alpha, seed, n, e in res.points:
            fh.write(f"{_fmt(alpha)},{int(seed)},{int(n)},{int(e)}\n")
    _write_json({"slope": res.slope, "stderr": res.stderr},
                out / "sparsity_fit.json")
    print(f"slope = {res.slope:.4f} (se {res.stderr:.4f})")
    return EXIT_OK


def cmd_tail_fit(args):
    graph = graph_io.load_graph(args.graph)
    from .diagnostics import degree_tail_exponent, summary_stats
    st = summary_stats(graph, args.t)
    res = degree_tail_exponent(st)
    doc = {
        "exponent": res.exponent,
        "stderr": res.stderr,
        "hill_exponent": res.hill_exponent,
        "window": list(res.window),
        "n_points": res.n_points,
        "is_power_law": res.is_power_law,
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(doc, out / "tail_fit.json")
        print(f"wrote {out / 'tail_fit.json'}")
    else:
        json.dump(doc, sys.stdout, indent=2, sort_keys=True)
        print()
    return EXIT_OK


def cmd_export_affiliations(args):
    cfg = _load_run_config(args)
    out = _out_dir(cfg, args)
    graph = graph_io.load_graph(args.graph, labels_path=args.labels)
    from .diagnostics import affiliations, align_labels
    chain = align_labels(graph_io.load_draws(args.draws))
    table = affiliations(chain, graph)
    p = table.proportions.shape[2]
    path = out / "affiliations.csv"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        head = ",".join(f"affil_{k + 1}" for k in range(p))
        fh.write(f"t,node,label,degree,tie,{head}\n")
        big_t, ell, _ = table.proportions.shape
        for t in range(big_t):
            for i in range(ell):
                lab = table.labels[i] if table.labels else ""
                probs = ",".join(_fmt(v) for v in table.proportions[t, i])
                fh.write(f"{t + 1},{i},{lab},{_fmt(table.degrees[t, i])},"
                         f"{int(table.ties[t, i])},{probs}\n")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_export_sankey(args):
    cfg = _load_run_config(args)
    out = _out_dir(cfg, args)
    graph = graph_io.load_graph(args.graph, labels_path=args.labels)
    from .diagnostics import affiliations, align_labels, sankey_flows
    chain = align_labels(graph_io.load_draws(args.draws))
    table = affiliations(chain, graph)
    flows = sankey_flows(table, args.top_k)
    path = out / "sankey_flows.json"
    _write_json(flows, path)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_ingest(args):
    docs = graph_io.read_sentences_jsonl(args.sentences)
    graph, labels = graph_io.ingest_corpus(docs, vocab_min_count=args.min_count)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    graph_io.save_graph(graph, out / "graph.edges")
    graph_io.save_labels(labels, out / "labels.txt")
    print(f"ingested {len(labels)} tokens, {graph.num_timesteps} timesteps "
          f"-> {out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dynsnetoc",
        description="Dynamic sparse multigraphs with overlapping communities: "
                    "simulation, inference, diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        sp = sub.add_parser(name, **kwargs)
        sp.set_defaults(fn=fn)
        sp.add_argument("--config", help="JSON run-config path")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry (section.key=value)")
        sp.add_argument("--out", help="output directory (default: config output.directory)")
        return sp

    add("simulate", cmd_simulate, help="simulate a dynamic multigraph")

    sp = add("infer", cmd_infer, help="run NUTS on an edge-list file")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--sequential", action="store_true",
                    help="run chains sequentially instead of in parallel")

    sp = add("ppc", cmd_ppc, help="posterior predictive degree envelope")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--draws", required=True)
    sp.add_argument("--replicates", type=int, default=500)

    sp = add("stats", cmd_stats, help="per-timestep summary statistics")
    sp.add_argument("--graph", required=True)

    sp = add("sparsity-scan", cmd_sparsity_scan,
             help="fit log E vs log N growth exponent over an alpha grid")
    sp.add_argument("--alphas", default="30,60,120,240")
    sp.add_argument("--seeds", type=int, default=5)

    sp = add("tail-fit", cmd_tail_fit, help="degree power-law tail estimate")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--t", type=int, default=1)

    sp = add("export-affiliations", cmd_export_affiliations,
             help="normalized posterior-mean community affiliations")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--draws", required=True)
    sp.add_argument("--labels")

    sp = add("export-sankey", cmd_export_sankey,
             help="community flow records for Sankey plots")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--draws", required=True)
    sp.add_argument("--labels")
    sp.add_argument("--top-k", type=int, default=50)

    sp = add("ingest", cmd_ingest,
             help="build a co-occurrence multigraph from JSONL sentences")
    sp.add_argument("--sentences", required=True)
    sp.add_argument("--min-count", type=int, default=1)
    sp.set_defaults(out="ingested")

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ParameterError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, InsufficientDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
