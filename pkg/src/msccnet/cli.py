"""Command line: ``msccnet {synth,annotate,train,eval,spectra-dump}``.

``synth``, ``annotate`` and ``train`` accept ``--config FILE`` (default
``$MSCCNET_CONFIG``) and one ``--<key>`` flag per run-config key, e.g.
``--total-iters 500``; ``eval`` and ``spectra-dump`` use the config stored
in the checkpoint.  Failures
exit with the category code of the raised error (2 config, 3 IO, 4 contract,
5 undefined metric, 6 non-finite loss).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Sequence

import numpy as np

from . import checkpoint, data
from . import config as config_mod
from . import metrics as metrics_mod
from . import network as net
from .annotate import annotate_pair
from .exceptions import ConfigError, ContractError, DataIOError, MSCCError
from .netpbm import read_mask, read_pnm, write_mask, write_pnm
from .tensor import no_grad

logger = logging.getLogger("msccnet")


# shared helpers ----------------------------------------------------------------
def _run_config(args: argparse.Namespace) -> config_mod.RunConfig:
    overrides = {k: getattr(args, k) for k in config_mod.CONFIG_KEYS if getattr(args, k, None) is not None}
    cfg = config_mod.resolve_config(args.config, overrides)
    logger.info("resolved config:\n%s", cfg.dumps().rstrip())
    return cfg


def _tags(text: str | None) -> list[str] | None:
    return [t for t in text.split(",") if t] if text else None


def _select(records, args: argparse.Namespace, default_split: str):
    splits = _tags(args.splits) or [default_split]
    include, exclude = _tags(args.include_tags), _tags(args.exclude_tags)
    held = getattr(args, "held_out", None)
    if held:
        if held not in data.fake_tags(records):
            raise ContractError(f"held-out tag {held!r} not in manifest; available {data.fake_tags(records)}")
        include = [held]
    selected = data.filter_records(records, splits, include, exclude)
    if not selected:
        raise ContractError(f"no records match splits={splits} include={include} exclude={exclude}")
    return selected


# verbs -------------------------------------------------------------------------
def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    records = data.synth_generate(args.n_real, args.n_fake, args.corpus_seed, args.out, size=cfg.synth_size)
    print(f"wrote {len(records)} records to {os.path.join(args.out, 'manifest.jsonl')}")
    return 0


def cmd_annotate(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    pairs = data.load_pairs(args.pairs)
    base = os.path.dirname(os.path.abspath(args.pairs))
    os.makedirs(args.out, exist_ok=True)
    ious, written = [], []
    for p in pairs:
        real = read_pnm(data.resolve(base, p["real"]))
        fake = read_pnm(data.resolve(base, p["fake"]))
        mask = annotate_pair(real, fake, bool(p.get("is_real", False)), cfg.annotate)
        path = os.path.join(args.out, f"{p['id']}.pgm")
        write_mask(path, mask)
        written.append({"id": p["id"], "mask": path})
        if p.get("mask"):
            truth = read_mask(data.resolve(base, p["mask"])).astype(bool)
            union = (truth | mask.astype(bool)).sum()
            ious.append(1.0 if union == 0 else float((truth & mask.astype(bool)).sum() / union))
    with open(os.path.join(args.out, "annotations.jsonl"), "w", encoding="utf-8") as fh:
        for w in written:
            fh.write(json.dumps(w, sort_keys=True) + "\n")
    print(f"annotated {len(written)} pairs into {args.out}")
    if ious:
        print(f"iou_vs_true_mean={np.mean(ious):.6f}\niou_vs_true_min={np.min(ious):.6f}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    records = data.load_manifest(args.manifest)
    selected = _select(records, args, "train")
    images, masks, labels = data.load_arrays(selected, os.path.dirname(os.path.abspath(args.manifest)))
    if images.shape[-1] != cfg.train.input_size or images.shape[-2] != cfg.train.input_size:
        raise ConfigError(f"images are {images.shape[-2]}x{images.shape[-1]} but input_size is {cfg.train.input_size}")
    trace_fh = open(args.trace, "w", encoding="utf-8") if args.trace else None

    def log_step(m: net.StepMetrics) -> None:
        if trace_fh:
            trace_fh.write(json.dumps(m._asdict()) + "\n")
        if m.iteration % args.log_every == 0:
            logger.info("iter %d lr %.6f loss %.5f (cls %.4f seg %.4f mscc %.4f)", *m)

    try:
        params, trace = net.fit(images, masks, labels, cfg.network, cfg.train, callback=log_step)
    finally:
        if trace_fh:
            trace_fh.close()
    extra = {"n_train": len(selected), "final_loss": trace[-1].loss if trace else None}
    checkpoint.save_checkpoint(args.out, params, cfg, extra)
    config_mod.save(f"{args.out}.cfg", cfg)
    print(f"trained {len(trace)} iterations on {len(selected)} images; checkpoint {args.out}")
    return 0


def evaluate(params, cfg: config_mod.RunConfig, records, base: str) -> dict:
    images, masks, labels = data.load_arrays(records, base)
    pred = net.predict(images, params, cfg.network)
    acc = metrics_mod.EvalAccumulator()
    acc.add_masks(pred.masks, masks > 0)
    acc.add_images(labels, pred.image_scores, pred.labels)
    return metrics_mod.summarize(acc)


def cmd_eval(args: argparse.Namespace) -> int:
    params, cfg, _ = checkpoint.load_checkpoint(args.ckpt)
    records = data.load_manifest(args.manifest)
    selected = _select(records, args, "test")
    report = evaluate(params, cfg, selected, os.path.dirname(os.path.abspath(args.manifest)))
    if args.held_out:
        report["held_out"] = args.held_out
    if args.report:
        metrics_mod.write_report(report, args.report)
    sys.stdout.write(metrics_mod.format_report(report))
    return 0


def spectral_maps(params, cfg: config_mod.RunConfig, image: np.ndarray) -> np.ndarray:
    """Mean absolute response of each spectrum group, min-max scaled to 0..255: ``[M, h, w]`` uint8."""
    if not cfg.network.use_mscc:
        raise ConfigError("checkpoint has no MSCC module; spectra are undefined")
    with no_grad():
        out = net.forward(net.preprocess(image[None]), params, cfg.network)
    maps = np.abs(out.mscc.spectra.data[0]).mean(axis=1)
    lo = maps.min(axis=(1, 2), keepdims=True)
    span = maps.max(axis=(1, 2), keepdims=True) - lo
    scaled = np.where(span > 0, (maps - lo) / np.where(span > 0, span, 1.0), 0.0)
    return np.rint(255 * scaled).astype(np.uint8)


def cmd_spectra_dump(args: argparse.Namespace) -> int:
    params, cfg, _ = checkpoint.load_checkpoint(args.ckpt)
    image = read_pnm(args.image)
    if image.ndim != 3:
        raise DataIOError(f"{args.image!r} is not an RGB (P6) image")
    maps = spectral_maps(params, cfg, image)
    os.makedirs(args.out, exist_ok=True)
    for m, band in enumerate(maps):
        write_pnm(os.path.join(args.out, f"spectrum_{m}.pgm"), band)
    print(f"wrote {len(maps)} spectrum maps of {maps.shape[1]}x{maps.shape[2]} to {args.out}")
    return 0


# parser ------------------------------------------------------------------------
def _verbose_flag() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parent


def _config_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False, parents=[_verbose_flag()])
    parent.add_argument("--config", help=f"flat key=value config file (default ${config_mod.CONFIG_ENV})")
    group = parent.add_argument_group("run-config keys")
    defaults = config_mod.RunConfig().flat()
    for key in config_mod.CONFIG_KEYS:
        group.add_argument(f"--{key.replace('_', '-')}", dest=key, metavar="V", help=f"default {config_mod._format(defaults[key])}")
    return parent


def _filter_flags(p: argparse.ArgumentParser, default_split: str) -> None:
    p.add_argument("--splits", help=f"comma-separated splits (default {default_split})")
    p.add_argument("--include-tags", help="only these fake manipulation tags")
    p.add_argument("--exclude-tags", help="drop these fake manipulation tags")


def build_parser() -> argparse.ArgumentParser:
    parent = _config_flags()
    quiet = _verbose_flag()
    parser = argparse.ArgumentParser(prog="msccnet", description="Multi-spectral class-center face manipulation localization.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", parents=[parent], help="generate a procedural tamper corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-real", type=int, default=200)
    p.add_argument("--n-fake", type=int, default=200)
    p.add_argument("--corpus-seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("annotate", parents=[parent], help="derive masks from real/fake pairs")
    p.add_argument("--pairs", required=True, help="pairs.jsonl (id, real, fake[, mask])")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("train", parents=[parent], help="train and write a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--trace", help="write the per-iteration loss trace (JSON lines)")
    p.add_argument("--log-every", type=int, default=100)
    _filter_flags(p, "train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[quiet], help="evaluate a checkpoint on a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", help="write <prefix>.txt and <prefix>.json")
    p.add_argument("--held-out", help="leave-one-out: evaluate only this fake tag (plus reals)")
    _filter_flags(p, "test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("spectra-dump", parents=[quiet], help="write one P5 map per spectrum group")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_spectra_dump)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except MSCCError as exc:
        print(f"msccnet {args.verb}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"msccnet {args.verb}: error: {exc}", file=sys.stderr)
        return DataIOError.exit_code


if __name__ == "__main__":
    sys.exit(main())
