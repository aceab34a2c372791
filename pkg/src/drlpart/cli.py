"""Command-line entry point: train, partition, separator, order, evalfill, gen-dataset."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .a2c import TrainConfig, train_driver
from .edge_sep import (RefineConfig, edge_separator, multilevel_greedy_bisection, train_coarse_episode,
                       train_edge_episode)
from .errors import DrlPartError
from .graph import balance
from .nn import coarse_agent_params, load_checkpoint, refine_agent_params, save_checkpoint
from .ordering import FILL_HEADER, Permutation, evaluate_orderings, minimum_degree, nested_dissection
from .vertex_sep import fallback_separator, make_provider, train_vertex_episode, vertex_separator

CHECKPOINT_ENV = "DRLPART_CHECKPOINT_DIR"
TASK_CHANNELS = {"edge": 5, "vertex": 7, "coarse": 2}
PRETRAINED = "pretrained"
PRETRAINED_DIR = Path(__file__).parent / "pretrained"

log = logging.getLogger("drlpart")


class UsageError(Exception):
    """Bad configuration; reported with exit code 2."""


# ---------------------------------------------------------------- config handling

def read_config_file(path) -> dict[str, str]:
    """Plain ``key = value`` lines; ``#`` starts a comment. Keys use option names, dashes or underscores."""
    out = {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    for i, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{i}: expected key = value")
        key, value = (x.strip() for x in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _as_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def apply_config(parser: argparse.ArgumentParser, config: dict[str, str]) -> None:
    """Install config values as parser defaults so explicit flags still win."""
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, value in config.items():
        act = actions.get(key)
        if act is None or key in ("help", "config"):
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[key] = _as_bool(value)
        elif act.type is not None:
            try:
                defaults[key] = act.type(value)
            except (TypeError, ValueError):
                raise UsageError(f"bad value for {key}: {value!r}") from None
        else:
            defaults[key] = value
    parser.set_defaults(**defaults)


def pretrained_checkpoint(task: str) -> Path:
    """Checkpoint shipped with the package for ``task`` (edge or vertex)."""
    path = PRETRAINED_DIR / f"{task}.ckpt"
    if not path.is_file():
        raise UsageError(f"no pretrained {task} checkpoint is bundled")
    return path


def checkpoint_path(explicit, task: str, must_exist: bool = False):
    """Explicit path, else ``$DRLPART_CHECKPOINT_DIR/<task>.ckpt`` when that directory is set.

    The explicit value ``pretrained`` selects the checkpoint bundled with the package.
    """
    if explicit == PRETRAINED:
        return pretrained_checkpoint(task)
    if explicit:
        return Path(explicit)
    root = os.environ.get(CHECKPOINT_ENV)
    if not root:
        return None
    path = Path(root) / f"{task}.ckpt"
    if must_exist and not path.is_file():
        return None
    return path


def _load_agent(explicit, task: str):
    path = checkpoint_path(explicit, task, must_exist=True)
    if path is None:
        return None
    return load_checkpoint(path, kind=task, channels=TASK_CHANNELS[task])


def _refine_config(args) -> RefineConfig:
    try:
        return RefineConfig(n_min=args.n_min, k_hops=args.k_hops, coarse_solver=args.solver,
                            seed=args.seed, external_cmd=args.external_cmd)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_input_graph(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input not found: {path}")
    g = dataio.load_graph(p)
    if not g.is_connected():
        g, kept = dataio.largest_component(g)
        log.warning("input is disconnected; using its largest component (%d of nodes kept)", len(kept))
    return g


def _emit(text: str, output) -> None:
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    if not args.dataset:
        raise UsageError("train needs --dataset")
    data = Path(args.dataset)
    if not (data / "tags.jsonl").is_file():
        raise UsageError(f"dataset not found: {args.dataset}")
    ds = dataio.load_dataset(data)
    try:
        cfg = TrainConfig(gamma=args.gamma, alpha=args.alpha, lr=args.lr, workers=args.workers,
                          update_every=args.update_every, epochs=args.epochs, seed=args.seed,
                          returns_mode=args.returns_mode)
        rc = RefineConfig(n_min=args.n_min, k_hops=args.k_hops, mode="train", seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    task = args.task
    if args.init:
        store = load_checkpoint(args.init, kind=task, channels=TASK_CHANNELS[task])
    elif task == "coarse":
        store = coarse_agent_params(TASK_CHANNELS[task], seed=args.seed)
    else:
        store = refine_agent_params(TASK_CHANNELS[task], seed=args.seed)
    episode = {"edge": train_edge_episode, "vertex": train_vertex_episode, "coarse": train_coarse_episode}[task]
    out = checkpoint_path(args.checkpoint, task)
    if out is None:
        raise UsageError(f"no --checkpoint given and {CHECKPOINT_ENV} is not set")
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.jsonl")
    with open(log_path, "w") as fh:
        store, records = train_driver(ds, cfg, lambda g, lr, rng: episode(g, lr, rng, rc), store, fh)
    save_checkpoint(store, out)
    rewards = [r.cumulative_reward for r in records if r.skipped is None]
    mean = float(np.mean(rewards)) if rewards else float("nan")
    print(f"episodes={len(records)} mean_reward={mean:.6g} checkpoint={out} log={log_path}")
    return 0


def cmd_partition(args) -> int:
    g = _load_input_graph(args.input)
    cfg = _refine_config(args)
    refine = _load_agent(args.refine_ckpt, "edge")
    coarse = _load_agent(args.coarse_ckpt, "coarse")
    if refine is None and coarse is None:
        log.warning("no edge checkpoint; using the greedy multilevel baseline")
        b = multilevel_greedy_bisection(g, cfg.n_min, cfg.seed)
    else:
        b = edge_separator(g, cfg, refine, coarse)
    _emit("".join(f"{i} {v}\n" for i, v in enumerate(b.label.tolist())), args.output)
    print(f"n={g.n} cut={b.cut} NC={b.nc():.6g} balance={balance(b):.6g}",
          file=sys.stderr if not args.output else sys.stdout)
    return 0


def cmd_separator(args) -> int:
    g = _load_input_graph(args.input)
    cfg = _refine_config(args)
    refine = _load_agent(args.refine_ckpt, "vertex")
    coarse = _load_agent(args.coarse_ckpt, "coarse")
    if refine is None and coarse is None:
        log.warning("no vertex checkpoint; using the greedy fallback separator")
        s = fallback_separator(g)
    else:
        s = vertex_separator(g, cfg, refine, coarse)
    _emit("".join(f"{i} {'ABS'[v]}\n" for i, v in enumerate(s.label.tolist())), args.output)
    ratio = max(s.card_a, s.card_b) / max(1, min(s.card_a, s.card_b))
    print(f"n={g.n} |S|={s.card_s} |A|={s.card_a} |B|={s.card_b} NS={s.ns():.6g} balance={ratio:.6g}",
          file=sys.stderr if not args.output else sys.stdout)
    return 0


def _provider(args):
    if args.provider == "fallback":
        return None
    cfg = _refine_config(args)
    refine = _load_agent(args.refine_ckpt, "vertex")
    edge = _load_agent(args.edge_ckpt, "edge")
    if refine is None and edge is None:
        raise UsageError("the drl provider needs an edge or vertex checkpoint (--edge-ckpt, --refine-ckpt or "
                         f"{CHECKPOINT_ENV}/<task>.ckpt)")
    return make_provider(cfg, refine, _load_agent(args.coarse_ckpt, "coarse"), edge_params=edge)


def _ordering_fn(method: str, args, provider):
    if method == "natural":
        return None
    if method == "md":
        return minimum_degree
    if method == "nd":
        return lambda g: nested_dissection(g, args.nd_n_min, provider)
    raise UsageError(f"unknown ordering {method!r}")


def _load_pattern(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input not found: {path}")
    if p.suffix == ".mtx":
        return dataio.read_matrix_market(p)
    from .ordering import SparsePattern
    return SparsePattern.from_graph(dataio.read_graph_file(p))


def cmd_order(args) -> int:
    pattern = _load_pattern(args.input)
    provider = _provider(args) if args.method == "nd" else None
    fn = _ordering_fn(args.method, args, provider)
    perm = Permutation.identity(pattern.n) if fn is None else fn(pattern.graph())
    _emit("".join(f"{v}\n" for v in perm.p.tolist()), args.output)
    return 0


def cmd_evalfill(args) -> int:
    methods = [m.strip() for m in args.orderings.split(",") if m.strip()]
    if len(methods) + len(args.perm) < 2:
        raise UsageError("evalfill compares at least two orderings")
    provider = _provider(args) if "nd" in methods else None
    lines = [FILL_HEADER]
    table = []
    for path in args.inputs:
        pattern = _load_pattern(path)
        mid = Path(path).stem
        orderings = {m: _ordering_fn(m, args, provider) for m in methods}
        for perm_path in args.perm:
            p = Permutation(dataio.read_permutation(perm_path))
            if len(p) != pattern.n:
                raise UsageError(f"{perm_path}: permutation length {len(p)} != n={pattern.n}")
            orderings[Path(perm_path).stem] = lambda g, p=p: p
        records = evaluate_orderings(pattern, orderings, mid)
        lines.extend(r.to_line() for r in records)
        table.append((mid, records))
    _emit("\n".join(lines) + "\n", args.output)
    out = sys.stderr if not args.output else sys.stdout
    names = [r.ordering for r in table[0][1]]
    print("matrix".ljust(20) + "".join(n.rjust(16) for n in names), file=out)
    for mid, records in table:
        print(mid[:20].ljust(20) + "".join(str(r.factor_nnz).rjust(16) for r in records), file=out)
    return 0


def cmd_gen_dataset(args) -> int:
    if not args.output:
        raise UsageError("gen-dataset needs --output")
    if args.kind == "matrix-dir" and not (args.matrix_dir and Path(args.matrix_dir).is_dir()):
        raise UsageError(f"matrix directory not found: {args.matrix_dir}")
    try:
        ds = dataio.build_training_dataset(args.kind, args.n_min, args.n_max, args.count, args.seed,
                                           matrix_dir=args.matrix_dir, coarsen=not args.no_coarsen)
    except (ValueError, FileNotFoundError) as exc:
        raise UsageError(str(exc)) from None
    dataio.save_dataset(ds, args.output)
    print(f"graphs={len(ds)} output={args.output}")
    return 0


# ---------------------------------------------------------------- parser

def _add_refine_flags(p, solver=True) -> None:
    p.add_argument("--n-min", type=int, default=100, help="coarsening floor")
    p.add_argument("--k-hops", type=int, default=3)
    p.add_argument("--refine-ckpt", help="refinement agent checkpoint, or 'pretrained' for the bundled one")
    p.add_argument("--coarse-ckpt", help="coarsest-level agent checkpoint")
    if solver:
        p.add_argument("--solver", choices=("auto", "rl", "greedy", "external"), default="auto",
                       help="coarsest-level solver")
        p.add_argument("--external-cmd", help="external partitioner command, {graph} is replaced by a METIS file")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="drlpart", description=__doc__)
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value file; explicit flags take precedence")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=fn)
        subs[name] = p
        return p

    p = add("train", cmd_train, "train an agent on a dataset directory")
    p.add_argument("--task", choices=tuple(TASK_CHANNELS), default="edge")
    p.add_argument("--dataset", help="directory written by gen-dataset (required)")
    p.add_argument("--checkpoint", help=f"output checkpoint (default ${CHECKPOINT_ENV}/<task>.ckpt)")
    p.add_argument("--init", help="start from this checkpoint")
    p.add_argument("--log", help="training log (JSON lines)")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--update-every", type=int, default=20)
    p.add_argument("--returns-mode", choices=("to_go", "past"), default="to_go")
    p.add_argument("--n-min", type=int, default=100)
    p.add_argument("--k-hops", type=int, default=3)

    p = add("partition", cmd_partition, "edge bisection of a graph")
    p.add_argument("input", help=".mtx or graph cache file")
    p.add_argument("-o", "--output")
    _add_refine_flags(p)

    p = add("separator", cmd_separator, "vertex separator of a graph")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    _add_refine_flags(p)

    for name, fn, text in (("order", cmd_order, "fill-reducing ordering of a matrix"),
                           ("evalfill", cmd_evalfill, "compare symbolic fill of several orderings")):
        p = add(name, fn, text)
        if name == "order":
            p.add_argument("input")
            p.add_argument("--method", choices=("nd", "md", "natural"), default="nd")
        else:
            p.add_argument("inputs", nargs="+")
            p.add_argument("--orderings", default="natural,md,nd", help="comma list of natural, md, nd")
            p.add_argument("--perm", action="append", default=[], help="extra permutation file to evaluate")
        p.add_argument("-o", "--output")
        p.add_argument("--provider", choices=("drl", "fallback"), default="fallback",
                       help="separator provider for nested dissection")
        p.add_argument("--nd-n-min", type=int, default=100, help="nested dissection block floor")
        p.add_argument("--edge-ckpt", help="edge agent checkpoint; separators then come from the edge pipeline "
                                           "plus a minimum cover")
        _add_refine_flags(p)

    p = add("gen-dataset", cmd_gen_dataset, "build a training dataset directory")
    p.add_argument("--kind", choices=("delaunay", "matrix-dir"), default="delaunay")
    p.add_argument("--matrix-dir")
    p.add_argument("--n-min", type=int, default=100)
    p.add_argument("--n-max", type=int, default=5000)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--no-coarsen", action="store_true", help="skip the coarsening chains")
    p.add_argument("-o", "--output", help="output dataset directory (required)")
    return parser, subs


def main(argv=None) -> int:
    parser, subs = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
        if args.config:
            apply_config(subs[args.command], read_config_file(args.config))
            args = parser.parse_args(argv)
        logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"drlpart: error: {exc}", file=sys.stderr)
        return 2
    except (DrlPartError, ValueError, OSError) as exc:
        print(f"drlpart: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
