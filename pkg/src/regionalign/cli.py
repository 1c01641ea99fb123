"""Command-line surface: gen-synth, train, eval, retrieve, confusion.

Exit codes: 0 success, 1 validation/usage error, 2 I/O error. Every error
path prints a single-line diagnostic to stderr. All randomness comes from
config seeds, so identical configs and inputs produce byte-identical
reports.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import io as engine_io
from .errors import EngineError
from .evalkit import accuracy_table, confusion
from .featmap import GridShape, partition_regions, pool_region
from .retrieval import RetrievalConfig, retrieve
from .student import student_forward, train
from .synth import gen_world


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="regionalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="generate a synthetic world")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the student head on a generated world")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="Top-1/Top-5 macro accuracy for annotated regions")
    p.add_argument("--features", required=True, nargs="+")
    p.add_argument("--bank", required=True)
    p.add_argument("--ann", required=True, nargs="+")
    p.add_argument("--report", required=True)
    p.add_argument("--tau", type=float, default=0.01)

    p = sub.add_parser("retrieve", help="assign categories to grid regions of a map")
    p.add_argument("--features", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--grid", default="4x4", help="rows x cols, e.g. 4x4")

    p = sub.add_parser("confusion", help="confusion matrix CSV for annotated regions")
    p.add_argument("--features", required=True, nargs="+")
    p.add_argument("--bank", required=True)
    p.add_argument("--ann", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, default=0.01)
    return parser


def _cmd_gen_synth(args) -> int:
    cfg = engine_io.load_world_config(args.config)
    world = gen_world(cfg)
    engine_io.write_world(world, args.out)
    print(
        f"wrote {len(world.train_images)} train and {len(world.eval_images)} eval "
        f"images with a {len(world.bank)}-category bank to {args.out}"
    )
    return 0


def _cmd_train(args) -> int:
    cfg = engine_io.load_train_config(args.config)
    bank, train_images = engine_io.read_world_split(args.data, "train")
    dataset = [(base, teacher) for base, teacher, _ in train_images]
    head, log = train(dataset, bank, bank, cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    engine_io.write_checkpoint(out / "head.json", head)
    engine_io.write_loss_log(out / "loss_log.json", log)

    # student-transformed eval maps let the eval subcommand score the result
    manifest = json.loads((Path(args.data) / "world.json").read_text("utf-8"))
    if manifest.get("n_eval", 0) > 0:
        _, eval_images = engine_io.read_world_split(args.data, "eval")
        student_dir = out / "eval_student"
        student_dir.mkdir(exist_ok=True)
        for i, (base, _, _) in enumerate(eval_images):
            engine_io.write_feature_map(
                student_dir / f"{i:03d}.dfm", student_forward(base, head)
            )
    final = log[-1].image_loss if log else 0.0
    print(f"trained {len(log)} steps ({cfg.support_mode}); final image loss {final:.6f}")
    return 0


def _load_eval_inputs(args):
    if len(args.features) != len(args.ann):
        raise EngineError(
            f"{len(args.features)} feature files but {len(args.ann)} annotation files"
        )
    bank = engine_io.read_bank(args.bank)
    maps = []
    records = []
    for i, (feat_path, ann_path) in enumerate(zip(args.features, args.ann)):
        fmap = engine_io.read_feature_map(feat_path)
        if fmap.channels != bank.channels:
            raise EngineError(
                f"{feat_path}: {fmap.channels} channels but bank has {bank.channels}"
            )
        maps.append(fmap)
        for record in engine_io.read_annotations(
            ann_path, map_shape=(fmap.height, fmap.width), n_categories=len(bank)
        ):
            records.append(dataclasses.replace(record, image_index=i))
    return bank, maps, records


def _cmd_eval(args) -> int:
    bank, maps, records = _load_eval_inputs(args)
    table = accuracy_table(records, maps, bank, args.tau)
    engine_io.write_accuracy_report(args.report, table, bank)
    for kind in sorted(table.kinds, key=lambda k: k.value):
        summary = table.kinds[kind]
        print(f"{kind.name}: top1 {summary.top1:.4f} top5 {summary.top5:.4f}")
    return 0


def _cmd_retrieve(args) -> int:
    try:
        rows, cols = (int(v) for v in args.grid.lower().split("x"))
    except ValueError:
        raise EngineError(f"--grid must look like 4x4, got '{args.grid}'") from None
    fmap = engine_io.read_feature_map(args.features)
    bank = engine_io.read_bank(args.bank)
    cfg = RetrievalConfig(tau=args.tau, theta=args.theta)
    regions = partition_regions((fmap.height, fmap.width), GridShape(rows, cols))
    feats = [pool_region(fmap, r) for r in regions]
    assignments = retrieve(feats, bank, cfg, regions)
    payload = {
        "kept_count": sum(a.kept for a in assignments),
        "region_count": len(assignments),
        "assignments": [
            {
                "region_index": a.region_index,
                "box": [a.region.x0, a.region.y0, a.region.x1, a.region.y1],
                "category": bank.names[a.category_index],
                "probability": a.teacher_max_prob,
                "kept": a.kept,
            }
            for a in assignments
        ],
    }
    print(json.dumps(payload, sort_keys=True, indent=1))
    return 0


def _cmd_confusion(args) -> int:
    bank, maps, records = _load_eval_inputs(args)
    matrix = confusion(records, maps, bank, args.tau)
    engine_io.write_confusion_csv(args.out, matrix)
    diag = int(matrix.counts.trace())
    print(f"wrote {len(records)}-record confusion matrix ({diag} on the diagonal)")
    return 0


_COMMANDS = {
    "gen-synth": _cmd_gen_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "retrieve": _cmd_retrieve,
    "confusion": _cmd_confusion,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except EngineError as err:
        sys.stderr.write(f"error: {err}\n")
        return 1
    except OSError as err:
        sys.stderr.write(f"io error: {err}\n")
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
