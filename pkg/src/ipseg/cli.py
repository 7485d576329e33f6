"""``ipseg`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric abort.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

from .bench import compare, run_pipeline_bench
from .config import RunConfig
from .errors import DataError, IoFailure, NumericError, UsageError
from .ipcore import compose_ip, write_channel_nifti, write_ip_bin
from .netbuild import BUILDERS as NET_BUILDERS
from .netbuild import NetConfig
from .trainer import (
    PIPELINES,
    evaluate,
    history_csv,
    load_checkpoint,
    make_dataset,
    phantom_suite,
    save_checkpoint,
    synth_phantom,
    train,
)
from .volio import read_header, read_nifti, resolve_axis, write_mask_nifti, write_nifti

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# flag -> (section, key)
_OVERRIDES = {
    "seed": (None, "seed"),
    "count": (None, "count"),
    "split_ratio": (None, "split_ratio"),
    "width_factor": ("net", "width_factor"),
    "in_channels": ("net", "in_channels"),
    "num_classes": ("net", "num_classes"),
    "depth": ("net", "depth"),
    "epochs": ("hyperparams", "epochs"),
    "lr": ("hyperparams", "learning_rate"),
    "batch_size": ("hyperparams", "batch_size"),
    "loss": ("hyperparams", "loss"),
    "optimizer": ("hyperparams", "optimizer"),
    "threshold": ("hyperparams", "cvp_threshold"),
    "mode": ("hyperparams", "cvp_mode"),
    "axis": ("hyperparams", "axis"),
    "dims": ("phantom", "dims"),
    "lesions": ("phantom", "num_lesions"),
    "noise": ("phantom", "noise_sigma"),
}


def _axis_arg(text):
    try:
        return int(text)
    except ValueError:
        return text


def _add_common(p, out=True):
    p.add_argument("--config", metavar="FILE", help="JSON run config; flags override it")
    p.add_argument("--seed", type=int)
    if out:
        p.add_argument("--out", metavar="DIR", help="output directory")


def _add_data(p):
    p.add_argument("data", nargs="?", metavar="DIR", help="directory of X.nii / X_mask.nii pairs")
    p.add_argument("--in", dest="data_in", metavar="DIR")
    p.add_argument("--count", type=int, help="synthetic phantoms when no data directory is given")
    p.add_argument("--split-ratio", type=float)
    p.add_argument("--dims", type=int, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--lesions", type=int)
    p.add_argument("--noise", type=float)


def _add_train_flags(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--loss", choices=("dice", "tversky"))
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--width-factor", type=float)
    p.add_argument("--axis", type=_axis_arg)
    p.add_argument("--threshold", type=float)
    p.add_argument("--mode", choices=("eq1-literal", "prose-lmip"))


def build_parser():
    top = _Parser(prog="ipseg", description="Projection-based calcification segmentation toolkit.")
    sub = top.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("info", help="print a NIfTI header summary")
    p.add_argument("file", nargs="?")
    p.add_argument("--in", dest="file_in", metavar="FILE")

    p = sub.add_parser("synth", help="write synthetic phantom image/mask pairs")
    _add_common(p)
    p.add_argument("--count", type=int)
    p.add_argument("--dims", type=int, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--lesions", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--gzip", action="store_true", help="write .nii.gz")

    p = sub.add_parser("project", help="write CVP, AvgIP and MIP images of a volume")
    _add_common(p)
    p.add_argument("file", nargs="?")
    p.add_argument("--in", dest="file_in", metavar="FILE")
    p.add_argument("--axis", type=_axis_arg)
    p.add_argument("--threshold", type=float)
    p.add_argument("--mode", choices=("eq1-literal", "prose-lmip"))
    p.add_argument("--format", choices=("nifti", "bin"), default="nifti")

    p = sub.add_parser("train", help="train one pipeline; writes a checkpoint and history")
    _add_common(p)
    _add_data(p)
    _add_train_flags(p)
    p.add_argument("--pipeline", choices=PIPELINES, default="ip")
    p.add_argument("--resume", metavar="CKPT")

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    _add_common(p)
    _add_data(p)
    p.add_argument("--ckpt", required=True, metavar="CKPT")
    p.add_argument("--split", choices=("train", "test"), default="test")

    p = sub.add_parser("bench", help="time and memory comparison of pipelines")
    _add_common(p)
    _add_data(p)
    _add_train_flags(p)
    p.add_argument("--pipelines", nargs="+", choices=PIPELINES, default=["ip", "vol3d"])
    p.add_argument("--repeats", type=int, default=3)

    p = sub.add_parser("plan", help="print the symbolic layer shape table")
    _add_common(p)
    p.add_argument("--width-factor", type=float)
    p.add_argument("--in-channels", type=int)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--size", type=int, nargs="+", default=[512, 512], metavar="N")
    p.add_argument("--net", choices=sorted(NET_BUILDERS), default="ipunet")
    p.add_argument("--json", action="store_true")
    return top


def _flag_names(message, args):
    """Rewrite config field names in ``message`` as the flags that set them."""
    for flag, (_, key) in _OVERRIDES.items():
        if getattr(args, flag, None) is not None and key in message:
            message = message.replace(key, "--" + flag.replace("_", "-"), 1)
    return message


def effective_config(args) -> RunConfig:
    """Config file (or defaults) with command-line flags applied."""
    try:
        return _effective_config(args)
    except UsageError as exc:
        raise UsageError(_flag_names(str(exc), args)) from exc


def _effective_config(args) -> RunConfig:
    rc = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    doc = rc.to_dict()
    for flag, (section, key) in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if section is None:
            doc[key] = value
        else:
            doc[section][key] = value
    if getattr(args, "num_classes", None) is not None:
        doc["phantom"]["num_classes"] = args.num_classes
    data = getattr(args, "data", None) or getattr(args, "data_in", None)
    if data:
        doc["paths"]["data"] = str(data)
    for name in ("ckpt", "resume"):
        if getattr(args, name, None):
            doc["paths"][name] = str(getattr(args, name))
    return RunConfig.from_dict(doc)


def _out_dir(args, default):
    out = Path(args.out or default)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    return out


def _dataset(rc: RunConfig):
    if rc.paths.get("data"):
        return make_dataset(rc.paths["data"], rc.split_ratio, rc.seed)
    return make_dataset(phantom_suite(rc.count, rc.phantom, rc.seed), rc.split_ratio, rc.seed)


def _net_config(rc: RunConfig, pipeline, num_classes):
    return replace(rc.net, in_channels=3 if pipeline == "ip" else 1,
                   dims=3 if pipeline == "vol3d" else 2, num_classes=num_classes)


def _hyper(rc: RunConfig):
    return replace(rc.hyperparams, seed=rc.seed)


def _write_json(path, obj, run_hash):
    doc = dict(obj)
    doc["run_hash"] = run_hash
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def cmd_info(args):
    path = args.file or args.file_in
    if not path:
        raise UsageError("info: a NIfTI file is required (positional or --in)")
    print(json.dumps(read_header(path).summary(), indent=2))


def cmd_synth(args):
    rc = effective_config(args)
    out = _out_dir(args, "phantoms")
    ext = ".nii.gz" if args.gzip else ".nii"
    specs = phantom_suite(rc.count, rc.phantom, rc.seed)
    for i, spec in enumerate(specs):
        vol, mask = synth_phantom(spec)
        write_nifti(vol, out / f"phantom{i:03d}{ext}")
        write_mask_nifti(mask, out / f"phantom{i:03d}_mask{ext}")
    rc.write(out)
    print(f"wrote {len(specs)} pairs to {out} (run {rc.digest()})")


def cmd_project(args):
    path = args.file or args.file_in
    if not path:
        raise UsageError("project: an input volume is required (positional or --in)")
    rc = effective_config(args)
    rc.paths["input"] = str(path)
    out = _out_dir(args, "projections")
    vol = read_nifti(path)
    hp = rc.hyperparams
    axis = resolve_axis(vol, hp.axis)
    ip = compose_ip(vol, axis, hp.cvp)
    stem = Path(path).name.split(".")[0]
    short = {"cvp": "cvp", "avgip": "avg", "mip": "mip"}
    written = []
    if args.format == "bin":
        written.extend(write_ip_bin(ip, out / f"{stem}_ip.bin"))
    else:
        spacing = tuple(s for i, s in enumerate(vol.spacing) if i != axis) + (1.0,)
        for name, img in zip(ip.channel_names, ip.channels):
            target = out / f"{stem}_{short.get(name, name)}.nii"
            write_channel_nifti(img, target, spacing)
            written.append(target)
    rc.write(out)
    for w in written:
        print(w)


def cmd_train(args):
    rc = effective_config(args)
    out = _out_dir(args, f"run_{args.pipeline}")
    data = _dataset(rc)
    hp = _hyper(rc)
    resume = load_checkpoint(args.resume) if args.resume else None
    cfg = _net_config(rc, args.pipeline, data.num_classes)

    def report(row):
        print(f"epoch {row[0]:5d}  loss {row[1]:.6f}  {row[2]:.2f}s", flush=True)

    ckpt, history = train(args.pipeline, cfg, data, hp, resume=resume, on_epoch=report)
    ckpt.extra["run_hash"] = rc.digest()
    save_checkpoint(ckpt, out / "model.ckpt")
    (out / "history.csv").write_text(f"# run {rc.digest()}\n" + history_csv(history))
    rc.write(out)
    print(f"checkpoint {out / 'model.ckpt'}")


def cmd_eval(args):
    rc = effective_config(args)
    out = _out_dir(args, "eval")
    ckpt = load_checkpoint(args.ckpt)
    report = evaluate(ckpt, _dataset(rc), args.split)
    _write_json(out / "metrics.json", report.to_dict(), rc.digest())
    rc.write(out)
    print(report.to_json())


def cmd_bench(args):
    rc = effective_config(args)
    out = _out_dir(args, "bench")
    data = _dataset(rc)
    hp = _hyper(rc)
    records, scores = [], {}
    for pipeline in args.pipelines:
        keep = []
        rec = run_pipeline_bench(pipeline, _net_config(rc, pipeline, data.num_classes), data, hp,
                                 repeats=args.repeats, keep=keep)
        records.append(rec)
        if data.test:
            scores[pipeline] = evaluate(keep[0][0], data, "test")
        print(f"{pipeline}: {rec.total_seconds:.2f}s, peak {rec.peak_tracked_bytes} bytes", flush=True)
    report = compare(records, scores)
    _write_json(out / "comparison.json", report.to_dict(), rc.digest())
    (out / "comparison.csv").write_text(f"# run {rc.digest()}\n" + report.to_csv())
    rc.write(out)
    print(json.dumps(report.headline))


def cmd_plan(args):
    rc = effective_config(args)
    dims = len(args.size)
    if dims not in (2, 3):
        raise UsageError("--size takes two or three integers")
    cfg = replace(rc.net, dims=dims)
    if args.in_channels is None and args.config is None:
        cfg = replace(cfg, in_channels=1 if args.net != "ipunet" else NetConfig().in_channels)
    net = NET_BUILDERS[args.net](cfg)
    plan = net.shape_plan((cfg.in_channels, *args.size))
    print(plan.to_json() if args.json else plan.to_text())
    if args.out:
        out = _out_dir(args, ".")
        (out / "plan.txt").write_text(plan.to_text() + "\n")
        rc.write(out)


COMMANDS = {
    "info": cmd_info, "synth": cmd_synth, "project": cmd_project, "train": cmd_train,
    "eval": cmd_eval, "bench": cmd_bench, "plan": cmd_plan,
}


def _thread_limit():
    raw = os.environ.get("IPSEG_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"IPSEG_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise UsageError("IPSEG_THREADS must be >= 0")
    if n == 0:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def dispatch(argv=None) -> int:
    """Run one subcommand and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        with _thread_limit():
            COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ipseg: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"ipseg: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"ipseg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
