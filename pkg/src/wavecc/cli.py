"""``wavecc`` command line: train, encode, decode, eval, bdrate, inspect.

Every successful run ends with one line ``wavecc <command> ok key=value ...``.
Failures print ``wavecc <command> error: <message>`` on stderr and exit with
2 (usage), 3 (I/O), 4 (format or digest) or 5 (numeric).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from wavecc.errors import DataError, WaveccError

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4, 5


class UsageError(WaveccError):
    exit_code = EXIT_USAGE


def read_config(path):
    """key=value lines; '#' starts a comment; keys use flag spelling."""
    values = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError("cannot read config file", path=str(path), reason=exc.strerror) from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError("config line is not key=value", path=str(path), line=n)
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _parser():
    p = argparse.ArgumentParser(prog="wavecc", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="key=value file supplying defaults for flags")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train stage 1 (luma) or stage 2 (chroma)")
    t.add_argument("--stage", type=int, choices=(1, 2), default=1)
    t.add_argument("--data", help="directory of PNG/PPM training images")
    t.add_argument("--lambda", dest="lam", type=float, default=0.01)
    t.add_argument("--steps", type=int, default=300)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", help="checkpoint to write")
    t.add_argument("--init", help="checkpoint to start from (required for stage 2)")
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--crop", type=int, default=64)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--lr-min", type=float, default=1e-6)
    t.add_argument("--fusion-width", type=int, default=32)
    t.add_argument("--log", help="training log CSV (default: <out>.log.csv)")

    e = sub.add_parser("encode", help="compress an image")
    e.add_argument("--model")
    e.add_argument("--in", dest="inp")
    e.add_argument("--out")
    e.add_argument("--report", help="per-subband diagnostics CSV")
    e.add_argument("--no-cross-component", action="store_true",
                   help="zero every context channel taken from another component")

    d = sub.add_parser("decode", help="decompress a bitstream")
    d.add_argument("--model")
    d.add_argument("--in", dest="inp")
    d.add_argument("--out")
    d.add_argument("--report", help="per-subband diagnostics CSV")
    d.add_argument("--force", action="store_true", help="decode despite a weights digest mismatch")

    v = sub.add_parser("eval", help="rate and PSNR of a model over an image folder")
    v.add_argument("--model")
    v.add_argument("--data")
    v.add_argument("--out")
    v.add_argument("--codec", default="wavecc")
    v.add_argument("--lambda", dest="lam", type=float, default=None)
    v.add_argument("--append", action="store_true", help="add the row to an existing CSV")
    v.add_argument("--jobs", type=int, default=1)

    b = sub.add_parser("bdrate", help="Bjontegaard delta rate between two RD CSVs")
    b.add_argument("--anchor")
    b.add_argument("--test")
    b.add_argument("--anchor-codec")
    b.add_argument("--test-codec")
    b.add_argument("--fit", choices=("cubic", "pchip"), default="cubic")

    i = sub.add_parser("inspect", help="print bitstream header fields")
    i.add_argument("--in", dest="inp")
    return p


REQUIRED = {
    "train": ("data", "out"),
    "encode": ("model", "inp", "out"),
    "decode": ("model", "inp", "out"),
    "eval": ("model", "data", "out"),
    "bdrate": ("anchor", "test"),
    "inspect": ("inp",),
}


def _apply_config(args, parser, argv):
    if not args.config:
        return
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions if a.dest != "help"}
    aliases = {"lambda": "lam", "in": "inp"}
    explicit = {a.dest for a in sub._actions
                for opt in a.option_strings if any(x == opt or x.startswith(opt + "=") for x in argv)}
    for key, raw in read_config(args.config).items():
        dest = aliases.get(key, key)
        if dest not in known:
            raise UsageError("unknown config key for this command", key=key, command=args.command)
        if dest in explicit:
            continue
        action = known[dest]
        if isinstance(action, argparse._StoreTrueAction):
            value = raw.lower() in ("1", "true", "yes", "on")
        else:
            value = action.type(raw) if action.type else raw
            if action.choices and value not in action.choices:
                raise UsageError("invalid config value", key=key, value=raw)
        setattr(args, dest, value)


def _summary(command, **fields):
    parts = " ".join(f"{k}={v}" for k, v in fields.items())
    print(f"wavecc {command} ok {parts}".rstrip())


def _load_model(path):
    from wavecc.model import WaveccModel
    return WaveccModel.load(path)


def cmd_train(args):
    from wavecc.data import make_batches
    from wavecc.model import ModelConfig, WaveccModel
    from wavecc.train import TrainConfig, train_stage1, train_stage2

    if args.stage == 2 and not args.init:
        raise UsageError("stage 2 needs --init with a stage-1 checkpoint")
    model = _load_model(args.init) if args.init else WaveccModel(
        ModelConfig.desk(fusion_width=args.fusion_width), seed=args.seed)
    config = TrainConfig(lam=args.lam, batch_size=args.batch_size, crop=args.crop, steps=args.steps,
                         lr0=args.lr, lr_min=args.lr_min, stage=args.stage, seed=args.seed)
    components = "Y" if args.stage == 1 else "YCbCr"
    batches = make_batches(args.data, args.crop, args.batch_size, args.seed, components)
    log_path = args.log or f"{args.out}.log.csv"
    run = train_stage1 if args.stage == 1 else train_stage2
    history = run(model, batches, config, log_path=log_path, checkpoint=args.out)
    _summary("train", stage=args.stage, steps=len(history), loss=f"{history[-1][2]:.6f}",
             out=args.out, log=log_path, digest=f"{model.digest():016x}")


def cmd_encode(args):
    from wavecc.codec.pipeline import encode_image, write_report
    from wavecc.evalkit import component_rate_report, psnr
    from wavecc.pixelio import load_image

    model = _load_model(args.model)
    image = load_image(args.inp)
    result = encode_image(image, model, cross_component=not args.no_cross_component)
    _write_bytes(args.out, result.bitstream)
    if args.report:
        write_report(result.reports, args.report)
    shares = component_rate_report(result.reports)
    _summary("encode", bytes=len(result.bitstream), bpp=f"{result.bpp():.6f}",
             psnr_db=f"{psnr(image, result.image):.4f}", chroma_share=f"{shares['chroma_share']:.4f}",
             out=args.out)


def cmd_decode(args):
    from wavecc.codec.pipeline import decode_image, write_report
    from wavecc.pixelio import save_image

    model = _load_model(args.model)
    blob = _read_bytes(args.inp)
    result = decode_image(blob, model, force=args.force)
    save_image(result.image.to_uint8(), args.out)
    if args.report:
        write_report(result.reports, args.report)
    _summary("decode", width=result.header.orig_width, height=result.header.orig_height, out=args.out)


def _eval_one(model, image):
    from wavecc.codec.pipeline import encode_image
    from wavecc.evalkit import psnr
    result = encode_image(image, model)
    return result.bpp(), psnr(image, result.image)


def cmd_eval(args):
    import csv
    import math
    from concurrent.futures import ThreadPoolExecutor

    from wavecc.data import load_folder
    from wavecc.evalkit import RD_COLUMNS

    model = _load_model(args.model)
    images = load_folder(args.data)
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(lambda img: _eval_one(model, img), images))
    bpp = sum(r[0] for r in results) / len(results)
    finite = [r[1] for r in results if math.isfinite(r[1])]
    quality = sum(finite) / len(finite) if finite else math.inf
    new_file = not (args.append and os.path.exists(args.out))
    with open(args.out, "w" if new_file else "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(RD_COLUMNS)
        writer.writerow((args.codec, "" if args.lam is None else repr(args.lam), repr(bpp), repr(quality)))
    _summary("eval", images=len(images), bpp=f"{bpp:.6f}", psnr_db=f"{quality:.4f}", out=args.out)


def _pick(curves, name, path):
    if name is not None:
        if name not in curves:
            raise UsageError("codec not found in RD CSV", codec=name, path=path)
        return curves[name]
    if len(curves) != 1:
        raise UsageError("RD CSV holds several codecs; choose one", path=path, codecs=",".join(curves))
    return next(iter(curves.values()))


def cmd_bdrate(args):
    from wavecc.evalkit import bd_rate, read_rd

    anchor = _pick(read_rd(args.anchor), args.anchor_codec, args.anchor)
    test = _pick(read_rd(args.test), args.test_codec, args.test)
    value = bd_rate(anchor, test, method=args.fit)
    print(f"BD rate: {value:.2f}%")
    _summary("bdrate", bd_rate_percent=f"{value:.6f}", fit=args.fit)


def cmd_inspect(args):
    from wavecc.codec.bitstream import read_bitstream

    header, payload = read_bitstream(_read_bytes(args.inp))
    fields = {
        "version": header.version, "flags": header.flags,
        "orig_width": header.orig_width, "orig_height": header.orig_height,
        "padded_width": header.padded_width, "padded_height": header.padded_height,
        "levels": header.levels, "mixtures": header.mixtures, "delta": f"{header.delta:.8g}",
        "weights_digest": f"{header.weights_digest:016x}", "payload_bytes": len(payload),
    }
    for k, v in fields.items():
        print(f"{k}: {v}")
    for comp, rows in zip(("Y", "Cb", "Cr"), header.bounds):
        print(f"bounds {comp}: " + " ".join(f"{lo}..{hi}" for lo, hi in rows))
    _summary("inspect", **fields)


def _read_bytes(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise DataError("cannot read file", path=str(path), reason=exc.strerror) from None


def _write_bytes(path, blob):
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise DataError("cannot write file", path=str(path), reason=exc.strerror) from None


COMMANDS = {"train": cmd_train, "encode": cmd_encode, "decode": cmd_decode, "eval": cmd_eval,
            "bdrate": cmd_bdrate, "inspect": cmd_inspect}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_config(args, parser, argv)
        missing = [f"--{'in' if k == 'inp' else k}" for k in REQUIRED[args.command]
                   if getattr(args, k) is None]
        if missing:
            raise UsageError("missing required arguments: " + " ".join(missing))
        COMMANDS[args.command](args)
    except WaveccError as exc:
        print(f"wavecc {args.command} error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"wavecc {args.command} error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main():
    sys.exit(run())
