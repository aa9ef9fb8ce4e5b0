"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every run writes ``<out>/manifest.json`` and appends its metric records to
``<out>/results.jsonl``.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .. import __version__
from ..errors import DataError, NumericError
from ..metalearn import FFOMAML, MetaState, load_checkpoint, save_checkpoint
from ..relgraph import EmbeddingTable, embed_universe
from ..task_model import generate_synthetic_universe, universe_from_json, universe_to_json
from ..theorysim import default_h_grid, sweep
from . import experiments as ex
from .config import config_from_snapshot, load_config
from .ingest import ingest_jd, ingest_vending, sample_paths

MANIFEST = "manifest.json"
RESULTS = "results.jsonl"
MAX_SEED = 2 ** 64 - 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value <= MAX_SEED:
        raise argparse.ArgumentTypeError(f"seed must lie in [0, 2**64), got {text}")
    return value


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


@dataclass
class RunManifest:
    command: str
    argv: list
    seed: int
    config: dict
    inputs: dict = field(default_factory=dict)   # path -> sha256
    outputs: list = field(default_factory=list)
    version: str = __version__

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Per-invocation context: output directory, manifest and record buffer."""

    def __init__(self, args, config, argv):
        self.args = args
        self.config = config
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(args.command, list(argv), args.seed, config.snapshot())
        self.records = []

    def input(self, path) -> Path:
        path = Path(path)
        self.manifest.inputs[str(path)] = file_hash(path)
        return path

    def output(self, name: str) -> Path:
        path = self.out / name
        self.manifest.outputs.append(str(path))
        return path

    def write(self, name: str, text: str) -> Path:
        path = self.output(name)
        path.write_text(text, encoding="utf-8")
        return path

    def finish(self):
        stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        if self.records:
            results = self.output(RESULTS)
            with results.open("a", encoding="utf-8") as f:
                for rec in self.records:
                    f.write(replace(rec, timestamp=stamp).to_json() + "\n")
        (self.out / MANIFEST).write_text(self.manifest.to_json() + "\n", encoding="utf-8")


# -- data sources ----------------------------------------------------------------

def _universe(run: Run):
    if getattr(run.args, "universe", None):
        return universe_from_json(run.input(run.args.universe).read_text(encoding="utf-8"))
    return generate_synthetic_universe(run.config.synth, run.args.seed)


def _embeddings(run: Run, universe):
    if getattr(run.args, "embeddings", None):
        return EmbeddingTable.from_text(run.input(run.args.embeddings).read_text(encoding="utf-8"))
    return embed_universe(universe, run.config.gcn, run.args.seed)


# -- subcommands -------------------------------------------------------------------

def cmd_synth(run: Run):
    universe = generate_synthetic_universe(run.config.synth, run.args.seed)
    run.write("universe.json", universe_to_json(universe))
    print(f"synthetic universe: {len(universe)} tasks")


def cmd_ingest_jd(run: Run):
    a = run.args
    paths = sample_paths("jd")
    paths.update({k: Path(v) for k, v in (("sku", a.sku), ("users", a.users), ("orders", a.orders)) if v})
    for p in paths.values():
        run.input(p)
    universe = ingest_jd(paths, category_column=a.category_column or run.config.experiment.jd_category_column)
    run.write("universe.json", universe_to_json(universe))
    print(f"JD universe: {len(universe)} tasks, feature dim {universe.feature_dim}")


def cmd_ingest_vending(run: Run):
    a = run.args
    paths = sample_paths("vending")
    given = (("sales", a.sales), ("experiment", a.experiment), ("product", a.product), ("shelf", a.shelf))
    paths.update({k: Path(v) for k, v in given if v})
    for p in paths.values():
        run.input(p)
    universe = ingest_vending(paths)
    run.write("universe.json", universe_to_json(universe))
    print(f"vending universe: {len(universe)} tasks, feature dim {universe.feature_dim}")


def cmd_embed(run: Run):
    universe = _universe(run)
    table = embed_universe(universe, run.config.gcn, run.args.seed)
    run.write("embeddings.txt", table.to_text())
    print(f"embedded {len(table.node_ids)} products, dim {table.dim}, final loss {table.losses[-1]:.4f}")


def cmd_train(run: Run):
    universe = _universe(run)
    prep = ex.prepare(run.config, run.args.seed, universe, _embeddings(run, universe))
    learner = ex.fit(run.args.method, prep)
    if isinstance(learner, MetaState):
        save_checkpoint(learner, run.output("checkpoint.npz"))
    rec = ex.evaluate(learner, run.args.method, prep, run.args.seed)
    run.records.append(rec)
    print(rec.to_json())


def cmd_eval(run: Run):
    state = load_checkpoint(run.input(run.args.checkpoint))
    universe = _universe(run)
    prep = ex.prepare(run.config, run.args.seed, universe, _embeddings(run, universe))
    rec = ex.evaluate(state, run.args.method, prep, run.args.seed)
    run.records.append(rec)
    print(rec.to_json())


def cmd_theory(run: Run):
    a = run.args
    grid = a.grid if a.grid else (list(default_h_grid()) if a.axis == "h" else [10, 100, 1000])
    seeds = [run.args.seed + i for i in range(a.seeds)]
    curve = sweep(a.axis, grid, run.config.theory, seeds)
    run.write(f"risk_curve_{a.axis}.txt", curve.to_text())
    ex.save_curve_svg(run.output(f"risk_curve_{a.axis}.svg"), curve.values, curve.mean, curve.lo,
                      curve.hi, a.axis, "excess risk", logx=True, logy=a.axis == "T")
    print(curve.to_text(), end="")


def cmd_ablate_k(run: Run):
    universe = _universe(run)
    embeddings = _embeddings(run, universe)
    seeds = [run.args.seed + i for i in range(run.args.seeds)]
    points, records = ex.ablate_kshot(universe, embeddings, run.config, run.args.k_grid, seeds)
    run.records.extend(records)
    run.write("ablation_k.txt", ex.kshot_table(points))
    ex.save_curve_svg(run.output("ablation_k.svg"), [p.k for p in points], [p.mean_mae for p in points],
                      [p.lo for p in points], [p.hi for p in points], "k", "test MAE")
    print(ex.kshot_table(points), end="")


COMMANDS = {
    "synth": cmd_synth,
    "ingest-jd": cmd_ingest_jd,
    "ingest-vending": cmd_ingest_vending,
    "embed": cmd_embed,
    "train": cmd_train,
    "eval": cmd_eval,
    "theory": cmd_theory,
    "ablate-k": cmd_ablate_k,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="flat key = value config file")
    common.add_argument("--seed", type=_seed, default=argparse.SUPPRESS, help="run seed (u64)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")

    parser = _Parser(prog="ffomaml", parents=[common],
                     description="Meta-learning for demand prediction under promotions.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command",
                                parser_class=_Parser)

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text)

    def universe_args(p):
        p.add_argument("--universe", help="universe.json (default: synthetic from the seed)")
        p.add_argument("--embeddings", help="embeddings.txt (default: train the graph forecaster)")

    add("synth", "write a synthetic task universe")
    p = add("ingest-jd", "build a universe from JD.com-style CSVs (bundled samples by default)")
    p.add_argument("--sku")
    p.add_argument("--users")
    p.add_argument("--orders")
    p.add_argument("--category-column", help="sku column used as the product category")
    p = add("ingest-vending", "build a universe from vending-machine CSVs (bundled samples by default)")
    for name in ("sales", "experiment", "product", "shelf"):
        p.add_argument(f"--{name}")
    p = add("embed", "train the graph forecaster and write product embeddings")
    p.add_argument("--universe")
    p = add("train", "train a method and evaluate it on the test split")
    p.add_argument("--method", choices=ex.METHODS, default=FFOMAML)
    universe_args(p)
    p = add("eval", "evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--method", default=FFOMAML, help="label (and proxy use) for the record")
    universe_args(p)
    p = add("theory", "excess-risk sweep of the threshold estimator")
    p.add_argument("--axis", choices=("h", "T"), required=True)
    p.add_argument("--grid", type=_floats, help="comma-separated grid values")
    p.add_argument("--seeds", type=int, default=20, help="number of seeds (at least 10)")
    p = add("ablate-k", "k-shot ablation of F-FOMAML")
    p.add_argument("--k-grid", type=_ints, default=[1, 2, 5, 10, 15])
    p.add_argument("--seeds", type=int, default=3)
    universe_args(p)
    p = add("replay", "re-run the invocation recorded in a manifest")
    p.add_argument("manifest")
    return parser


def _defaults(args):
    for name, value in (("config", None), ("seed", 0), ("out", "out")):
        if not hasattr(args, name):
            setattr(args, name, value)
    return args


def _execute(args, config, argv) -> None:
    run = Run(args, config, argv)
    if args.config:
        run.input(args.config)
    COMMANDS[args.command](run)
    run.finish()


def _replay(parser, args) -> None:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    for path, digest in manifest["inputs"].items():
        if not Path(path).exists() or file_hash(path) != digest:
            raise DataError(f"input {path} is missing or changed since the recorded run")
    old = _defaults(parser.parse_args(manifest["argv"]))
    out = args.out if hasattr(args, "out") else old.out
    replayed = argparse.Namespace(**{**vars(old), "out": out})
    _execute(replayed, config_from_snapshot(manifest["config"]), manifest["argv"])


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        if args.command == "replay":
            _replay(parser, args)
        else:
            args = _defaults(args)
            _execute(args, load_config(args.config), argv)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
