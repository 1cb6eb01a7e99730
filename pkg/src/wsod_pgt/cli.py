"""``wsod-pgt`` command line front end.

Data goes to files or stdout, logs go to stderr. Exit status is 0 on
success, 2 for bad input data or configuration, 1 for anything else.

Every subcommand accepts ``--config FILE`` holding flat ``key = value``
lines (keys are long option names, dashes or underscores); explicit flags
override the file.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from wsod_pgt import losscheck
from wsod_pgt.clustering import (
    BACKGROUND,
    DEFAULT_ASSIGN_THRESHOLD,
    DEFAULT_EDGE_THRESHOLD,
    ScoredProposal,
    cluster,
)
from wsod_pgt.evaluation import evaluate
from wsod_pgt.mining import MiningConfig, MiningWarning, mine_dataset
from wsod_pgt.oracle import DetectorOracle, OracleConfig, synthetic_dataset
from wsod_pgt.refinement import (
    RefinementPolicy,
    TimingRule,
    UpdateRule,
    pgt_annotations,
    pgt_detections,
    run_refinement_loop,
)
from wsod_pgt.voc_io import (
    FormatError,
    ImageAnnotation,
    image_level_labels,
    parse_annotation,
    parse_detections,
    parse_labels,
    write_annotation,
    write_detections,
)

logger = logging.getLogger("wsod_pgt")

EXIT_OK, EXIT_INTERNAL, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    """Bad configuration or missing inputs; maps to exit status 2."""


# --------------------------------------------------------------------------
# file helpers


def read_text(path: str | Path) -> str:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {p}")
    return p.read_text(encoding="utf-8")


def _parse_file(path: Path) -> ImageAnnotation:
    try:
        return parse_annotation(path.read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path.name}: {exc}") from None


def load_gt_dir(gt_dir: str | Path, jobs: int = 1) -> list[ImageAnnotation]:
    """Parse every ``*.xml`` below ``gt_dir``; result sorted by image id."""
    root = Path(gt_dir)
    if not root.is_dir():
        raise UsageError(f"no such directory: {root}")
    files = sorted(root.glob("*.xml"))
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        annotations = list(pool.map(_parse_file, files))
    seen: dict[str, Path] = {}
    for path, a in zip(files, annotations):
        if a.image_id in seen:
            raise FormatError(f"image id {a.image_id!r} appears in {seen[a.image_id].name} and {path.name}")
        seen[a.image_id] = path
    return sorted(annotations, key=lambda a: a.image_id)


def write_annotations(out_dir: str | Path, annotations: Sequence[ImageAnnotation]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for a in annotations:
        (out / f"{a.image_id}.xml").write_text(write_annotation(a), encoding="utf-8", newline="\n")


def emit(text: str, path: str | None) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8", newline="\n")


def read_config(path: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(read_text(path).splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


# --------------------------------------------------------------------------
# argument types


def _unit_open(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return v


def _unit_closed(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return v


def _nonneg(text: str) -> float:
    v = float(text)
    if not v >= 0.0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {text}")
    return v


def _timing(text: str) -> TimingRule:
    try:
        return TimingRule(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"choose from {', '.join(t.value for t in TimingRule)}") from None


def _update(text: str) -> UpdateRule:
    try:
        return UpdateRule(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"choose from {', '.join(u.value for u in UpdateRule)}") from None


def _add_oracle_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("detector oracle")
    g.add_argument("--seed", type=_seed, default=0)
    g.add_argument("--jitter", type=_nonneg, default=0.0, help="corner jitter as a fraction of box size")
    g.add_argument("--miss-rate", type=_unit_closed, default=0.0)
    g.add_argument("--fp-rate", type=_nonneg, default=0.0, help="expected spurious boxes per image")
    g.add_argument("--score-noise", type=_nonneg, default=0.0)
    g.add_argument("--epoch-gain", type=_nonneg, default=0.0)


def _oracle_config(args: argparse.Namespace) -> OracleConfig:
    return OracleConfig(
        seed=args.seed,
        jitter_frac=args.jitter,
        miss_rate=args.miss_rate,
        fp_rate=args.fp_rate,
        score_noise=args.score_noise,
        epoch_gain=args.epoch_gain,
    )


# --------------------------------------------------------------------------
# commands


def _fraction(num: int, den: int) -> str:
    return str(Fraction(num, den)) if den else "0"


def cmd_evaluate(args: argparse.Namespace) -> int:
    gt = load_gt_dir(args.gt_dir, args.jobs)
    dets = parse_detections(read_text(args.detections))
    report = evaluate(dets, gt, args.iou_threshold)
    for cls in sorted(report.ap):
        c = report.curves[cls]
        logger.info(
            "class=%s TP=%d FP=%d FN=%d precision=%s recall=%s",
            cls, c.tp, c.fp, c.fn, _fraction(c.tp, c.tp + c.fp), _fraction(c.tp, c.n_pos),
        )
    emit(report.to_csv(), args.out)
    if args.pr_curves:
        emit(report.curves_csv(), args.pr_curves)
    return EXIT_OK


def cmd_mine(args: argparse.Namespace) -> int:
    if args.labels:
        labels = parse_labels(read_text(args.labels))
        sizes = {}
    elif args.gt_dir:
        gt = load_gt_dir(args.gt_dir, args.jobs)
        labels = [image_level_labels(a) for a in gt]
        sizes = {a.image_id: (a.width, a.height) for a in gt}
    else:
        raise UsageError("mine-pgt needs --gt-dir or --labels")
    dets = parse_detections(read_text(args.detections))
    warnings: list[MiningWarning] = []
    pgt = mine_dataset(dets, labels, MiningConfig(args.k), sizes, warnings)
    write_annotations(args.out_dir, pgt)
    logger.info("wrote %d PGT annotations to %s (%d warnings)", len(pgt), args.out_dir, len(warnings))
    return EXIT_OK


def cmd_refine_loop(args: argparse.Namespace) -> int:
    gt = load_gt_dir(args.gt_dir, args.jobs)
    policy = RefinementPolicy(args.timing, args.update, args.k)
    oracle = DetectorOracle(_oracle_config(args))
    run = run_refinement_loop(oracle, gt, policy, args.max_epochs, args.iou_threshold)
    out = Path(args.out_dir)
    emit(run.to_csv(), str(out / "epochs.csv"))
    sizes = {a.image_id: (a.width, a.height) for a in gt}
    write_annotations(out / "pgt", pgt_annotations(run.pgt, sizes))
    emit(write_detections(pgt_detections(run.pgt)), str(out / "pgt_scored.txt"))
    logger.info("%d refinement events over %d epochs", run.refinement_events, args.max_epochs)
    return EXIT_OK


def cmd_cluster(args: argparse.Namespace) -> int:
    dets = parse_detections(read_text(args.detections))
    groups: dict[tuple[str, str], list[ScoredProposal]] = {}
    for i, d in enumerate(dets):
        groups.setdefault((d.image_id, d.class_name), []).append(ScoredProposal(d.bbox, d.score, i))
    rows: dict[int, str] = {}
    for key in sorted(groups):
        result = cluster(groups[key], args.edge_threshold, args.assign_threshold)
        logger.info("%s/%s: %d proposals, %d centres", key[0], key[1], len(groups[key]), len(result.centers))
        for idx, center in result.assigned.items():
            label = "background" if center == BACKGROUND else str(center)
            rows[idx] = f"{idx},{label},{result.best_iou[idx]:.6f}"
    lines = ["index,center_index,iou"] + [rows[i] for i in sorted(rows)]
    emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_loss_check(args: argparse.Namespace) -> int:
    text = read_text(args.fixtures) if args.fixtures else None
    try:
        results = losscheck.run_all(text, seed=args.seed)
    except losscheck.FixtureError as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_DATA


def cmd_simulate(args: argparse.Namespace) -> int:
    gt = load_gt_dir(args.gt_dir, args.jobs)
    oracle = DetectorOracle(_oracle_config(args))
    for _ in range(args.epoch - 1):
        oracle.advance_epoch()
    dets = [d for a in gt for d in oracle.detect(a)]
    emit(write_detections(dets), args.out)
    return EXIT_OK


def cmd_make_dataset(args: argparse.Namespace) -> int:
    if args.min_instances > args.max_instances or args.min_classes > args.max_classes:
        raise UsageError("minimum exceeds maximum")
    gt = synthetic_dataset(
        args.n_images,
        seed=args.seed,
        classes=tuple(args.classes.split(",")),
        classes_per_image=(args.min_classes, args.max_classes),
        instances_per_class=(args.min_instances, args.max_instances),
    )
    write_annotations(args.out_dir, gt)
    logger.info("wrote %d synthetic annotations to %s", len(gt), args.out_dir)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' file; flags win")
    common.add_argument("--jobs", type=_positive_int, default=1, help="worker threads for file parsing")
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")

    parser = argparse.ArgumentParser(prog="wsod-pgt", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("evaluate", parents=[common], help="VOC-2007 11-point AP of detections")
    p.add_argument("--gt-dir")
    p.add_argument("--detections")
    p.add_argument("--iou-threshold", type=_unit_open, default=0.5)
    p.add_argument("--out", help="report CSV (default: stdout)")
    p.add_argument("--pr-curves", help="also write class,rank,score,recall,precision CSV here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("mine-pgt", parents=[common], help="top-k pseudo ground truth from detections")
    p.add_argument("--gt-dir", help="annotations to take image-level labels (and sizes) from")
    p.add_argument("--labels", help="label file 'image_id class1 class2 ...' instead of --gt-dir")
    p.add_argument("--detections")
    p.add_argument("--k", type=_positive_int, default=1)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("refine-loop", parents=[common], help="epoch loop with scheduled PGT refinement")
    p.add_argument("--gt-dir")
    p.add_argument("--timing", type=_timing, default=TimingRule.EVERY_EPOCH,
                   help="every | third | last3 | once23")
    p.add_argument("--update", type=_update, default=UpdateRule.ALL,
                   help="all | best-half | worst-half")
    p.add_argument("--k", type=_positive_int, default=1)
    p.add_argument("--max-epochs", type=_positive_int, default=12)
    p.add_argument("--iou-threshold", type=_unit_open, default=0.5)
    p.add_argument("--out-dir")
    _add_oracle_flags(p)
    p.set_defaults(func=cmd_refine_loop)

    p = sub.add_parser("cluster", parents=[common], help="proposal cluster centres per image and class")
    p.add_argument("--detections")
    p.add_argument("--edge-threshold", type=_unit_open, default=DEFAULT_EDGE_THRESHOLD)
    p.add_argument("--assign-threshold", type=_unit_open, default=DEFAULT_ASSIGN_THRESHOLD)
    p.add_argument("--out", help="cluster CSV (default: stdout)")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("loss-check", parents=[common], help="verify the loss kernels")
    p.add_argument("--fixtures", help="fixture JSON (default: the shipped one)")
    p.add_argument("--seed", type=_seed, default=0)
    p.set_defaults(func=cmd_loss_check)

    p = sub.add_parser("simulate", parents=[common], help="dump oracle detections for a GT directory")
    p.add_argument("--gt-dir")
    p.add_argument("--epoch", type=_positive_int, default=1, help="oracle epoch to sample at")
    p.add_argument("--out", help="detection file (default: stdout)")
    _add_oracle_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("make-dataset", parents=[common], help="write a synthetic VOC ground-truth set")
    p.add_argument("--out-dir")
    p.add_argument("--n-images", type=_positive_int, default=50)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--classes", default="aeroplane,bicycle,bird,cat,dog,person")
    p.add_argument("--min-classes", type=_positive_int, default=1)
    p.add_argument("--max-classes", type=_positive_int, default=2)
    p.add_argument("--min-instances", type=_positive_int, default=1)
    p.add_argument("--max-instances", type=_positive_int, default=1)
    p.set_defaults(func=cmd_make_dataset)
    return parser


REQUIRED = {
    "evaluate": ("gt_dir", "detections"),
    "mine-pgt": ("detections", "out_dir"),
    "refine-loop": ("gt_dir", "out_dir"),
    "cluster": ("detections",),
    "simulate": ("gt_dir",),
    "make-dataset": ("out_dir",),
}


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        raise UsageError("a subcommand is required")
    if args.config:
        args = _apply_config(parser, args, argv)
    missing = [n for n in REQUIRED.get(args.command, ()) if getattr(args, n) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"{args.command}: missing {flags} (flag or config key)")
    return args


def _apply_config(
    parser: argparse.ArgumentParser, args: argparse.Namespace, argv: Sequence[str] | None
) -> argparse.Namespace:
    sub = _subparser(parser, args.command)
    known = {a.dest for a in sub._actions}
    values = read_config(args.config)
    unknown = sorted(set(values) - known - {"config", "help"})
    if unknown:
        raise UsageError(f"{args.config}: unknown keys {', '.join(unknown)}")
    for a in sub._actions:
        if isinstance(a, argparse._StoreTrueAction) and a.dest in values:
            raw = values[a.dest].lower()
            if raw not in ("true", "false", "yes", "no", "1", "0"):
                raise UsageError(f"{args.config}: {a.dest} must be true or false")
            values[a.dest] = raw in ("true", "yes", "1")
    # String defaults go through each option's type converter, so config
    # values are validated exactly like flags.
    sub.set_defaults(**values)
    try:
        return parser.parse_args(argv)
    except SystemExit:
        raise UsageError(f"{args.config}: invalid value") from None


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"wsod-pgt: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        return args.func(args)
    except (UsageError, FormatError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except Exception:
        logger.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
