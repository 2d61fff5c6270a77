"""Command-line interface.

Subcommands: train, ber, analyze, graph export, prune, gradcheck, selftest.
Every command accepts --seed, --config <json file> and --out <dir>. Values
from the config file override built-in defaults; explicit command-line flags
override both. Exit codes: 0 success, 1 usage error, 2 runtime failure.

Each run writes a manifest.json into the output directory listing the seed,
the effective configuration and the paths of all produced files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import checks
from .channel import ChannelSpec, make_rng, reference_channel, transmit
from .cluster import prune as prune_weights
from .evaluation import (
    analyze_model,
    ber_sweep,
    make_detector,
    write_ber_csv,
    write_degree_table,
    write_relevance_histogram,
)
from .graph import build_ffg, build_ufg, graph_to_json
from .model import ClusterModel, load_model, save_model
from .training import TrainConfig, train, write_loss_history


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad arguments; we reserve 2 for
    runtime failures, so route parse errors through UsageError instead."""

    def error(self, message):
        raise UsageError(message)


def parse_esn0_range(text: str) -> list[float]:
    """'start:step:stop' inclusive, or a comma-separated list of values."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"bad esn0 range '{text}', expected start:step:stop")
        start, step, stop = (float(p) for p in parts)
        if step <= 0:
            raise UsageError("esn0 range step must be > 0")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        if n < 1:
            raise UsageError("empty esn0 range")
        return [start + i * step for i in range(n)]
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise UsageError(f"bad esn0 list '{text}'") from exc


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("config file must contain a JSON object")
    return doc


def _effective(args, config: dict, key: str, default):
    """Command line beats config file beats default."""
    cli_val = getattr(args, key, None)
    if cli_val is not None:
        return cli_val
    if key in config:
        return config[key]
    return default


def _taps(args, config) -> tuple[float, ...]:
    taps = _effective(args, config, "taps", None)
    if taps is None:
        return reference_channel().taps
    if isinstance(taps, str):
        taps = [float(t) for t in taps.split(",")]
    return tuple(float(t) for t in taps)


def _out_dir(args) -> Path:
    out = Path(args.out if args.out is not None else ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, seed: int, settings: dict,
                    outputs: dict) -> None:
    doc = {
        "command": command,
        "seed": seed,
        "settings": settings,
        "outputs": {k: str(v) for k, v in outputs.items()},
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2)
    print(f"manifest: {out / 'manifest.json'}")


# -- subcommand handlers ----------------------------------------------------


def cmd_train(args) -> int:
    config = _load_config(args.config)
    seed = _effective(args, config, "seed", 0)
    spec = ChannelSpec(_taps(args, config))
    tc = TrainConfig(
        k=int(_effective(args, config, "k", 64)),
        minibatch_size=int(_effective(args, config, "minibatch_size", 100)),
        steps=int(_effective(args, config, "steps", 2000)),
        learning_rate=float(_effective(args, config, "learning_rate", 1e-4)),
        beta_learning_rate=_effective(args, config, "beta_learning_rate", None),
        train_esn0_db=float(_effective(args, config, "train_esn0_db", 10.0)),
        n_train_iterations=int(_effective(args, config, "n_train_iterations", 10)),
        nbp=bool(_effective(args, config, "nbp", False)),
        tied=bool(_effective(args, config, "tied", False)),
        seed=int(seed),
        loss=str(_effective(args, config, "loss", "soft_ber")),
    )
    d_max = int(_effective(args, config, "d_max", 4))
    span_limit = _effective(args, config, "span_limit", None)
    if span_limit is not None:
        span_limit = int(span_limit)

    def progress(step, loss):
        if step % 50 == 0 or step == tc.steps:
            print(f"step {step}/{tc.steps}  soft-ber {loss:.5f}", flush=True)

    state = train(spec, d_max, tc, span_limit=span_limit, progress=progress)
    out = _out_dir(args)
    model_path = out / "model.json"
    loss_path = out / "loss_history.csv"
    save_model(state.model, model_path)
    write_loss_history(state.loss_history, loss_path)
    settings = {"d_max": d_max, "span_limit": span_limit, "taps": list(spec.taps)}
    settings.update(
        {f: getattr(tc, f) for f in (
            "k", "minibatch_size", "steps", "learning_rate",
            "beta_learning_rate", "train_esn0_db",
            "n_train_iterations", "nbp", "tied", "loss",
        )}
    )
    _write_manifest(out, "train", tc.seed, settings,
                    {"model": model_path, "loss_history": loss_path})
    return 0


def cmd_ber(args) -> int:
    config = _load_config(args.config)
    seed = int(_effective(args, config, "seed", 0))
    variant = _effective(args, config, "variant", None)
    if variant is None:
        raise UsageError("--variant is required (ufg, ffg, cc, map)")
    esn0_text = _effective(args, config, "esn0", "0:2:12")
    esn0 = parse_esn0_range(str(esn0_text))
    spec = ChannelSpec(_taps(args, config))
    k = int(_effective(args, config, "k", 64))
    model = None
    if variant == "cc":
        model_path = _effective(args, config, "model", None)
        if model_path is None:
            raise UsageError("variant cc needs --model")
        model = load_model(model_path)
        spec = model.spec
        k = model.k
    n_iter = _effective(args, config, "iterations", None)
    if variant == "cc" and n_iter is None:
        detector = make_detector("cc", spec, k, n_iterations=None, model=model)
    else:
        detector = make_detector(
            variant, spec, k, n_iterations=int(n_iter) if n_iter else 10,
            model=model,
        )
    records = ber_sweep(
        detector, spec, k, esn0, seed,
        min_errors=int(_effective(args, config, "min_errors", 100)),
        max_bits=int(_effective(args, config, "max_bits", 10_000_000)),
    )
    out = _out_dir(args)
    csv_path = out / "ber.csv"
    write_ber_csv(records, csv_path)
    for r in records:
        print(f"esn0 {r.esn0_db:>5.1f} dB  ber {r.ber:.3e}  "
              f"({r.errors} errors / {r.bits} bits)")
    _write_manifest(out, "ber", seed,
                    {"variant": variant, "k": k, "esn0": esn0,
                     "taps": list(spec.taps)},
                    {"ber_csv": csv_path})
    return 0


def _require_model(args, config) -> tuple[str, ClusterModel]:
    path = _effective(args, config, "model", None)
    if path is None:
        raise UsageError("--model is required")
    return path, load_model(path)


def cmd_analyze(args) -> int:
    config = _load_config(args.config)
    seed = int(_effective(args, config, "seed", 0))
    model_path, model = _require_model(args, config)
    analysis = analyze_model(model)
    out = _out_dir(args)
    hist_path = out / "relevance_histogram.csv"
    degree_path = out / "degree_table.csv"
    write_relevance_histogram(analysis, hist_path)
    write_degree_table(analysis, degree_path)
    for key, val in analysis.degree_percentages().items():
        label = f"degree {key}" if key != "pruned" else "pruned"
        print(f"{label:>9}: {val:6.2f}%")
    _write_manifest(out, "analyze", seed, {"model": str(model_path)},
                    {"relevance_histogram": hist_path,
                     "degree_table": degree_path})
    return 0


def cmd_graph_export(args) -> int:
    config = _load_config(args.config)
    seed = int(_effective(args, config, "seed", 0))
    variant = _effective(args, config, "variant", "ufg")
    spec = ChannelSpec(_taps(args, config))
    k = int(_effective(args, config, "k", 64))
    esn0 = float(_effective(args, config, "esn0_db", 10.0))
    sigma2 = 1.0 / (2.0 * 10.0 ** (esn0 / 10.0))
    rng = make_rng(seed, stream=40)
    x = 1.0 - 2.0 * rng.integers(0, 2, size=k)
    obs = transmit(x, spec, sigma2, rng)
    if variant == "ufg":
        graph = build_ufg(spec, obs)
    elif variant == "ffg":
        graph = build_ffg(spec, obs)
    else:
        raise UsageError("graph export supports variants ufg and ffg")
    out = _out_dir(args)
    path = out / f"{variant}_graph.json"
    with open(path, "w") as fh:
        fh.write(graph_to_json(graph))
    print(f"exported {variant} graph, {graph.n_fns} factor nodes, K={k}")
    _write_manifest(out, "graph export", seed,
                    {"variant": variant, "k": k, "esn0_db": esn0,
                     "taps": list(spec.taps)},
                    {"graph": path})
    return 0


def cmd_prune(args) -> int:
    config = _load_config(args.config)
    seed = int(_effective(args, config, "seed", 0))
    model_path, model = _require_model(args, config)
    thr = float(_effective(args, config, "thr", 0.01))
    before = analyze_model(model)
    pruned = ClusterModel(
        spec=model.spec, k=model.k, d_max=model.d_max,
        span_limit=model.span_limit, containers=model.containers,
        options=model.options, weights=prune_weights(model.weights, thr),
        nbp_weights=model.nbp_weights,
    )
    after = analyze_model(pruned)
    out = _out_dir(args)
    out_model = out / "pruned_model.json"
    save_model(pruned, out_model)
    before_path = out / "degree_table_before.csv"
    after_path = out / "degree_table_after.csv"
    write_degree_table(before, before_path)
    write_degree_table(after, after_path)
    print(f"pruned containers: {before.pruned_containers} -> "
          f"{after.pruned_containers} of {after.n_containers} "
          f"(threshold {thr})")
    _write_manifest(out, "prune", seed,
                    {"model": model_path, "thr": thr},
                    {"pruned_model": out_model,
                     "degree_table_before": before_path,
                     "degree_table_after": after_path})
    return 0


def cmd_gradcheck(args) -> int:
    config = _load_config(args.config)
    seed = int(_effective(args, config, "seed", 0))
    n = int(_effective(args, config, "instances", 10))
    err = checks.gradient_check(n_instances=n, seed=seed)
    ok = err < 1e-4
    print(f"gradcheck: max relative error {err:.3e} over {n} instances "
          f"-> {'pass' if ok else 'FAIL'}")
    out = _out_dir(args)
    _write_manifest(out, "gradcheck", seed, {"instances": n},
                    {})
    return 0 if ok else 2


def cmd_selftest(args) -> int:
    config = _load_config(args.config)
    seed = int(_effective(args, config, "seed", 0))
    failures = 0

    tree = checks.tree_exactness_check(n_graphs=25, seed=seed)
    ok = tree < 1e-9
    failures += not ok
    print(f"tree exactness: max marginal error {tree:.3e} "
          f"-> {'pass' if ok else 'FAIL'}")

    spread = checks.clustering_preservation_check(n_draws=5, seed=seed)
    ok = spread < 1e-9
    failures += not ok
    print(f"clustering preserves the global function: max spread {spread:.3e} "
          f"-> {'pass' if ok else 'FAIL'}")

    gerr = checks.gradient_check(n_instances=5, seed=seed)
    ok = gerr < 1e-4
    failures += not ok
    print(f"gradient check: max relative error {gerr:.3e} "
          f"-> {'pass' if ok else 'FAIL'}")

    out = _out_dir(args)
    _write_manifest(out, "selftest", seed, {}, {})
    return 0 if failures == 0 else 2


# -- parser -----------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", type=str, default=None,
                   help="JSON file with defaults for this command")
    p.add_argument("--out", type=str, default=None,
                   help="output directory (default: current directory)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fgdetect",
                     description="Factor-graph symbol detection on cyclic "
                                 "ISI channels with learned clustering.")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("train", help="train a clustered factor-graph model")
    _add_common(p)
    p.add_argument("--d-max", dest="d_max", type=int, default=None)
    p.add_argument("--span-limit", dest="span_limit", type=int, default=None)
    p.add_argument("--taps", type=str, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--minibatch-size", dest="minibatch_size", type=int,
                   default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float,
                   default=None)
    p.add_argument("--beta-learning-rate", dest="beta_learning_rate",
                   type=float, default=None)
    p.add_argument("--train-esn0-db", dest="train_esn0_db", type=float,
                   default=None)
    p.add_argument("--iterations", dest="n_train_iterations", type=int,
                   default=None)
    p.add_argument("--nbp", action="store_const", const=True, default=None)
    p.add_argument("--tied", action="store_const", const=True, default=None,
                   help="share weights across cyclic shifts during training")
    p.add_argument("--loss", type=str, default=None,
                   choices=("soft_ber", "soft_ber_multi", "cross_entropy"))
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("ber", help="Monte-Carlo bit error rate sweep")
    _add_common(p)
    p.add_argument("--variant", type=str, default=None,
                   choices=("ufg", "ffg", "cc", "map"))
    p.add_argument("--model", type=str, default=None)
    p.add_argument("--esn0", type=str, default=None,
                   help="start:step:stop (inclusive) or comma list, in dB")
    p.add_argument("--taps", type=str, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--min-errors", dest="min_errors", type=int, default=None)
    p.add_argument("--max-bits", dest="max_bits", type=int, default=None)
    p.set_defaults(handler=cmd_ber)

    p = sub.add_parser("analyze",
                       help="relevance histogram and degree distribution")
    _add_common(p)
    p.add_argument("--model", type=str, default=None)
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("graph", help="graph utilities")
    gsub = p.add_subparsers(dest="graph_command")
    pe = gsub.add_parser("export", help="export a factor graph as JSON")
    _add_common(pe)
    pe.add_argument("--variant", type=str, default=None,
                    choices=("ufg", "ffg"))
    pe.add_argument("--taps", type=str, default=None)
    pe.add_argument("--k", type=int, default=None)
    pe.add_argument("--esn0-db", dest="esn0_db", type=float, default=None)
    pe.set_defaults(handler=cmd_graph_export)

    p = sub.add_parser("prune", help="mask low-relevance components")
    _add_common(p)
    p.add_argument("--model", type=str, default=None)
    p.add_argument("--thr", type=float, default=None)
    p.set_defaults(handler=cmd_prune)

    p = sub.add_parser("gradcheck",
                       help="compare gradients against finite differences")
    _add_common(p)
    p.add_argument("--instances", type=int, default=None)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("selftest", help="run the built-in correctness checks")
    _add_common(p)
    p.set_defaults(handler=cmd_selftest)

    return parser


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "handler"):
            parser.print_usage(sys.stderr)
            return 1
        return args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
