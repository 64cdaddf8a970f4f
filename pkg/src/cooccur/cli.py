"""Command-line pipeline: synth -> graph -> train -> extract -> query/eval -> baseline.

Exit status: 0 on success, 1 on usage errors, 2 on data errors. Every output
artifact gets a JSON run manifest next to it (``<artifact>.run.json``, or
``run.json`` inside an archive directory); ``cooccur replay MANIFEST`` re-runs
the recorded command.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
import zlib
from contextlib import contextmanager, nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .encoder import EncoderConfig, load_checkpoint, save_checkpoint
from .graph import MODES, WeightConfig, adjacency_of, graph_rows
from .labelmap import LabelMapError, labels_present
from .metrics import evaluate
from .retrieval import DescriptorStore, StoreError, query, read_store, save_store
from .synthgen import (
    SynthConfig,
    generate,
    read_archive,
    read_ids,
    split,
    write_archive,
    write_ids,
)
from .trainer import TrainConfig, extract_descriptors, train

log = logging.getLogger("cooccur")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    return h, w


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cooccur", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    p.add_argument("--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic Voronoi archive")
    s.add_argument("--out", required=True)
    s.add_argument("--images", type=int, default=500)
    s.add_argument("--size", type=_size, default=(32, 32))
    s.add_argument("--classes", type=int, default=8)
    s.add_argument("--sites", type=int, default=6)
    s.add_argument("--channels", type=int, default=3)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split", type=_floats, default=(0.8, 0.0, 0.2),
                   help="train,query,test fractions")

    g = sub.add_parser("graph", help="adjacency weights of every archive image as CSV")
    g.add_argument("--archive", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--mode", choices=MODES, default="scaled")
    g.add_argument("--ids", default=None)
    g.add_argument("--no-self-edges", action="store_true")

    t = sub.add_parser("train", help="fit the encoder to adjacency targets")
    t.add_argument("--archive", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--log", default=None, help="per-epoch loss CSV")
    t.add_argument("--ids", default=None, help="defaults to ARCHIVE/train_ids.txt if present")
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--batch", type=int, default=16)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--mode", choices=MODES, default="scaled")
    t.add_argument("--no-self-edges", action="store_true")
    t.add_argument("--blocks", type=_ints, default=(16, 32))
    t.add_argument("--gamma", type=int, default=128)

    e = sub.add_parser("extract", help="descriptor store for archive images")
    e.add_argument("--archive", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--ids", default=None)

    q = sub.add_parser("query", help="top-k chi-square neighbours of a stored image")
    q.add_argument("--store", required=True)
    q.add_argument("--query", required=True)
    q.add_argument("--k", type=int, default=10)

    v = sub.add_parser("eval", help="mAP/ACG/NDCG curves for k = 1..k-max")
    v.add_argument("--store", required=True)
    v.add_argument("--queries", required=True, help="file of query ids")
    v.add_argument("--query-store", default=None,
                   help="DESC file holding the query descriptors (default: --store)")
    v.add_argument("--k-max", type=int, default=100)
    v.add_argument("--out", required=True)
    v.add_argument("--gain", choices=("linear", "exponential"), default="linear")

    b = sub.add_parser("baseline", help="seeded random descriptors in DESC format")
    b.add_argument("--archive", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--gamma", type=int, default=128)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--ids", default=None)

    r = sub.add_parser("replay", help="re-run the command recorded in a run manifest")
    r.add_argument("manifest")
    return p


# ---------------------------------------------------------------------------
# manifests


def _manifest_path(out: Path) -> Path:
    return out / "run.json" if out.is_dir() else out.with_name(out.name + ".run.json")


def write_manifest(args, argv, outputs, inputs=(), started=None) -> None:
    record = {
        "tool": "cooccur",
        "version": __version__,
        "subcommand": args.command,
        "argv": list(argv),
        "cwd": os.getcwd(),
        "flags": {k: v for k, v in vars(args).items() if k != "command"},
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "wall_clock_seconds": None if started is None else time.perf_counter() - started,
    }
    with open(_manifest_path(Path(outputs[0])), "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, default=list)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def _archive_ids(args, default_name=None):
    if args.ids:
        return read_ids(args.ids)
    if default_name:
        path = Path(args.archive) / default_name
        if path.exists():
            return read_ids(path)
    return None


def cmd_synth(args):
    h, w = args.size
    cfg = SynthConfig(args.images, h, w, args.classes, args.sites, args.channels,
                      args.noise, args.seed)
    items = generate(cfg)
    out = write_archive(args.out, items)
    train_ids, query_ids, test_ids = split([it.image_id for it in items], args.split, args.seed)
    write_ids(train_ids, out / "train_ids.txt")
    # with no query partition, queries come from the training split
    write_ids(query_ids or train_ids, out / "query_ids.txt")
    write_ids(test_ids, out / "test_ids.txt")
    log.info("wrote %d images to %s", len(items), out)
    return [out], []


def cmd_graph(args):
    wcfg = WeightConfig(mode=args.mode, self_edges=not args.no_self_edges)
    items = read_archive(args.archive, _archive_ids(args))
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["image_id", "p", "q", "weight"])
        for it in items:
            for image_id, p, q, wt in graph_rows(it.image_id, adjacency_of(it.label_map, wcfg)):
                wr.writerow([image_id, p, q, repr(wt)])
    return [args.out], [args.archive]


def cmd_train(args):
    items = read_archive(args.archive, _archive_ids(args, "train_ids.txt"))
    if not items:
        raise ValueError(f"{args.archive}: no training images")
    first = items[0]
    ecfg = EncoderConfig(
        input_channels=first.image.shape[0],
        input_size=first.image.shape[1:],
        block_widths=args.blocks,
        gamma=args.gamma,
        num_classes=first.label_map.num_classes,
        seed=args.seed,
    )
    tcfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        shuffle_seed=args.seed,
        weight_config=WeightConfig(mode=args.mode, self_edges=not args.no_self_edges),
    )
    report = train([(it.image, it.label_map) for it in items], ecfg, tcfg)
    save_checkpoint(args.out, ecfg, report.params)
    outputs = [args.out]
    if args.log:
        with open(args.log, "w", encoding="utf-8", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["epoch", "mean_loss"])
            for i, loss in enumerate(report.epoch_losses, 1):
                wr.writerow([i, repr(loss)])
        outputs.append(args.log)
    log.info("trained %d steps in %.1fs", report.steps, report.seconds)
    return outputs, [args.archive]


def cmd_extract(args):
    ecfg, params = load_checkpoint(args.model)
    items = read_archive(args.archive, _archive_ids(args))
    labels = {it.image_id: labels_present(it.label_map) for it in items}
    store = extract_descriptors(params, ecfg, [(it.image_id, it.image) for it in items], labels)
    save_store(store, args.out)
    return [args.out], [args.archive, args.model]


def cmd_query(args):
    store = read_store(args.store)
    hits = query(store, args.query, args.k)
    wr = csv.writer(sys.stdout, lineterminator="\n")
    wr.writerow(["rank", "id", "distance"])
    for rank, hit in enumerate(hits, 1):
        wr.writerow([rank, hit.image_id, repr(hit.distance)])
    return [], [args.store]


def cmd_eval(args):
    store = read_store(args.store)
    qstore = read_store(args.query_store) if args.query_store else store
    ids = read_ids(args.queries)
    missing = [i for i in ids if i not in qstore]
    if missing:
        raise StoreError(f"{args.queries}: query ids not in descriptor store: {missing[:5]}")
    queries = [(i, qstore.descriptor(i), qstore.labels(i)) for i in ids]
    curve = evaluate(store, queries, args.k_max, gain=args.gain)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["k", "map", "acg", "ndcg"])
        for k, m, a, n in curve.rows():
            wr.writerow([k, repr(m), repr(a), repr(n)])
    log.info("mAP@%d %.4f  ACG@%d %.4f  NDCG@%d %.4f", args.k_max, curve.map_at_k[-1],
             args.k_max, curve.acg_at_k[-1], args.k_max, curve.ndcg_at_k[-1])
    return [args.out], [args.store, args.queries]


def baseline(items, gamma: int, seed: int) -> DescriptorStore:
    """Uniform [0, 1) descriptors, seeded per (seed, image id)."""
    if not items:
        raise ValueError("empty archive")
    store = DescriptorStore(gamma, items[0].label_map.num_classes)
    for it in items:
        rng = np.random.default_rng([seed, zlib.crc32(it.image_id.encode())])
        store.add(it.image_id, rng.random(gamma), labels_present(it.label_map))
    return store


def cmd_baseline(args):
    items = read_archive(args.archive, _archive_ids(args))
    save_store(baseline(items, args.gamma, args.seed), args.out)
    return [args.out], [args.archive]


COMMANDS = {
    "synth": cmd_synth,
    "graph": cmd_graph,
    "train": cmd_train,
    "extract": cmd_extract,
    "query": cmd_query,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
}


@contextmanager
def _chdir(path):
    old = os.getcwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(old)


def replay(manifest_path) -> int:
    with open(manifest_path, encoding="utf-8") as fh:
        record = json.load(fh)
    with _chdir(record["cwd"]):
        return run(record["argv"])


def _thread_limit(n):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(n)


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
    except UsageError as e:
        sys.stderr.write(str(e))
        return 1
    if not args.quiet and not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        if args.command == "replay":
            return replay(args.manifest)
        started = time.perf_counter()
        with _thread_limit(args.threads):
            outputs, inputs = COMMANDS[args.command](args)
        if outputs:
            write_manifest(args, argv, outputs, inputs, started)
    except (OSError, ValueError, LabelMapError, StoreError) as e:
        sys.stderr.write(f"cooccur {args.command}: {e}\n")
        return 2
    return 0


def main():
    sys.exit(run())
