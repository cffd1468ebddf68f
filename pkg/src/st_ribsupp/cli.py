"""Command-line front end: suppress, phantom, tune, evaluate.

Every run is reproducible: seeds default to fixed constants, outputs are
written atomically (temp file + rename), and no timestamps or timings go
into output files, so identical invocations produce byte-identical
artifacts.  Failures print a single machine-parsable ``error: ...`` line
and exit nonzero (2 for bad input, 1 for internal faults).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from dataclasses import fields
from pathlib import Path

from . import __version__
from .imagery import (
    Image,
    load_image,
    load_mask_set,
    save_image,
    save_mask_set,
)
from .metrics import DEFAULT_ALPHA, DEFAULT_BETA, evaluate_pair
from .phantom import PhantomSpec, generate_phantom
from .st_space import write_field_dump
from .suppression import DEFAULT_PARAMS, SuppressionParams, suppress_all
from .tuner import (
    DEFAULT_SEED,
    ParamSpace,
    random_grid_search,
    supervised_objective,
    unsupervised_objective,
)

_THREADS_ENV = "ST_RIBSUPP_THREADS"


class CLIError(Exception):
    """User-facing failure; message printed as a single error line."""

    def __init__(self, message, code=2):
        super().__init__(message)
        self.code = code


def _atomic_write_bytes(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_text(path, text):
    _atomic_write_bytes(path, text.encode())


def _atomic_save_image(img, path, bitdepth):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.",
                               suffix=".png")
    os.close(fd)
    try:
        save_image(img, tmp, bitdepth=bitdepth)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _require_file(path, what):
    if not Path(path).exists():
        raise CLIError(f"{what} not found: {path}")
    return path


def _resolve_threads(args):
    if getattr(args, "threads", None) is not None:
        return max(1, args.threads)
    env = os.environ.get(_THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CLIError(f"bad {_THREADS_ENV} value: {env!r}") from None
    return 1


def _load_pair(args):
    img = load_image(_require_file(args.image, "image file"))
    masks = load_mask_set(_require_file(args.masks, "mask file"))
    if len(masks) and masks.shape != img.shape:
        raise CLIError(
            f"mask shape {masks.shape} does not match image shape {img.shape}"
        )
    return img, masks


def _params_from_args(args):
    return SuppressionParams(
        kappa_t=args.kappa_t,
        tau=args.tau,
        k_center=args.k_center,
        s_b=args.s_b,
        k_border=args.k_border,
    )


def _bitdepth_for(img):
    return 8 if img.max_value <= 255 else 16


def _add_param_flags(p):
    d = DEFAULT_PARAMS
    p.add_argument("--kappa-t", dest="kappa_t", type=float, default=d.kappa_t,
                   help="Gaussian sigma along the contour, arc pixels")
    p.add_argument("--tau", type=float, default=d.tau,
                   help="centerline ratio threshold")
    p.add_argument("--k-center", dest="k_center", type=int, default=d.k_center,
                   help="neighbor count for the centerline average")
    p.add_argument("--s-b", dest="s_b", type=float, default=d.s_b,
                   help="border blend band depth, pixels")
    p.add_argument("--k-border", dest="k_border", type=int, default=d.k_border,
                   help="neighbor count for the border blend")


def _apply_config_defaults(subparser, argv, subcommand):
    """JSON config supplies defaults on the subcommand; explicit flags win."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return
    cfg_path = _require_file(known.config, "config file")
    try:
        cfg = json.loads(Path(cfg_path).read_text())
    except json.JSONDecodeError as exc:
        raise CLIError(f"malformed config {cfg_path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise CLIError(f"malformed config {cfg_path}: expected an object")
    cfg = dict(cfg.get(subcommand, cfg))
    valid = {a.dest for a in subparser._actions}
    unknown = set(cfg) - valid
    if unknown:
        raise CLIError(f"unknown config keys: {sorted(unknown)}")
    subparser.set_defaults(**cfg)


def cmd_suppress(args):
    img, masks = _load_pair(args)
    params = _params_from_args(args)
    t0 = time.perf_counter()
    result = suppress_all(
        img, masks, params, dt=args.dt, ds=args.ds,
        keep_fields=args.debug_dump is not None,
    )
    elapsed = time.perf_counter() - t0
    bitdepth = _bitdepth_for(img)
    _atomic_save_image(result.soft, args.out, bitdepth)
    if args.out_bone:
        bone = Image(data=result.bone_raster(img.shape), max_value=img.max_value)
        _atomic_save_image(bone, args.out_bone, bitdepth)
    if args.debug_dump is not None:
        dump_dir = Path(args.debug_dump)
        dump_dir.mkdir(parents=True, exist_ok=True)
        for label, (sampled, bone_field) in result.per_rib_fields.items():
            write_field_dump(sampled, dump_dir / f"rib_{label:02d}_sampled.stf")
            write_field_dump(bone_field, dump_dir / f"rib_{label:02d}_bone.stf")
    report = {
        "command": "suppress",
        "version": __version__,
        "image": str(args.image),
        "masks": str(args.masks),
        "params": {
            "kappa_t": params.kappa_t,
            "tau": params.tau,
            "k_center": params.k_center,
            "s_b": params.s_b,
            "k_border": params.k_border,
            "dt": args.dt,
            "ds": args.ds,
        },
        "ribs": len(masks),
        "outputs": {"soft": str(args.out),
                    "bone": str(args.out_bone) if args.out_bone else None},
    }
    _atomic_write_text(args.report, _json_text(report))
    print(f"suppressed {len(masks)} ribs in {elapsed:.2f}s -> {args.out}",
          file=sys.stderr)
    return 0


def cmd_phantom(args):
    if args.spec:
        spec_path = _require_file(args.spec, "phantom spec")
        try:
            spec = PhantomSpec.from_json(Path(spec_path).read_text())
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise CLIError(f"malformed phantom spec {spec_path}: {exc}") from None
    else:
        overrides = {
            f.name: getattr(args, f.name)
            for f in fields(PhantomSpec)
            if getattr(args, f.name, None) is not None
        }
        spec = PhantomSpec(**overrides)
    case = generate_phantom(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bitdepth = 8 if spec.max_value <= 255 else 16
    _atomic_save_image(case.raw, out / "raw.png", bitdepth)
    _atomic_save_image(case.gt_soft, out / "gt_soft.png", bitdepth)
    _atomic_save_image(case.gt_bone, out / "gt_bone.png", bitdepth)
    save_mask_set(case.masks, out / "masks.png")
    _atomic_write_text(out / "spec.json", spec.to_json())
    print(f"phantom with {len(case.masks)} ribs -> {out}", file=sys.stderr)
    return 0


def cmd_tune(args):
    img, masks = _load_pair(args)
    if args.objective == "supervised":
        if not args.gt:
            raise CLIError("supervised objective needs --gt")
        gt = load_image(_require_file(args.gt, "ground-truth image"))
        objective = supervised_objective(gt)
    else:
        objective = unsupervised_objective
    if args.space:
        space_path = _require_file(args.space, "search-space file")
        try:
            raw = json.loads(Path(space_path).read_text())
            space = ParamSpace(**{k: tuple(v) for k, v in raw.items()})
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise CLIError(f"malformed search space {space_path}: {exc}") from None
    else:
        space = ParamSpace()
    best, trace = random_grid_search(
        img,
        masks,
        space=space,
        budget=args.budget,
        objective=objective,
        seed=args.seed,
        n_threads=_resolve_threads(args),
        dt=args.dt,
        ds=args.ds,
    )
    best_doc = {
        "command": "tune",
        "version": __version__,
        "seed": args.seed,
        "budget": args.budget,
        "objective": args.objective,
        "candidates": len(trace.evals),
        "best_index": trace.best_index,
        "best_objective": trace.best.objective,
        "best_params": {
            "kappa_t": best.kappa_t,
            "tau": best.tau,
            "k_center": best.k_center,
            "s_b": best.s_b,
            "k_border": best.k_border,
        },
    }
    _atomic_write_text(args.out, _json_text(best_doc))
    if args.trace:
        lines = "".join(
            json.dumps(rec, sort_keys=True) + "\n"
            for rec in trace.to_jsonl_records()
        )
        _atomic_write_text(args.trace, lines)
    if args.out_image:
        result = suppress_all(img, masks, best, dt=args.dt, ds=args.ds)
        _atomic_save_image(result.soft, args.out_image, _bitdepth_for(img))
    print(
        f"tuned over {len(trace.evals)} candidates; best objective "
        f"{trace.best.objective:.6g}",
        file=sys.stderr,
    )
    return 0


def cmd_evaluate(args):
    x = load_image(_require_file(args.image, "image file"))
    y = load_image(_require_file(args.reference, "reference image"))
    if x.shape != y.shape:
        raise CLIError(f"image shape {x.shape} does not match reference {y.shape}")
    max_x = args.max_value if args.max_value is not None else y.max_value
    report = evaluate_pair(x, y, max_x, alpha=args.alpha, beta=args.beta)
    doc = {"command": "evaluate", "version": __version__,
           "image": str(args.image), "reference": str(args.reference),
           "max_value": max_x}
    doc.update(report.to_dict())
    text = _json_text(doc)
    if args.out:
        _atomic_write_text(args.out, text)
    sys.stdout.write(text)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="st-ribsupp",
        description="Rib suppression for chest radiographs in "
                    "contour-normal coordinates.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    subparsers = {}

    p = subparsers["suppress"] = sub.add_parser(
        "suppress", help="suppress ribs in one radiograph"
    )
    p.add_argument("--image", required=True, help="input PNG (8/16-bit gray)")
    p.add_argument("--masks", required=True,
                   help="indexed mask PNG or JSON manifest")
    p.add_argument("--out", required=True, help="output soft-tissue PNG")
    p.add_argument("--out-bone", help="optional output bone PNG")
    p.add_argument("--report", default="report.json", help="JSON run report")
    p.add_argument("--config", help="JSON config with flag defaults")
    _add_param_flags(p)
    p.add_argument("--dt", type=float, default=1.0, help="arc sample spacing")
    p.add_argument("--ds", type=float, default=1.0, help="depth sample spacing")
    p.add_argument("--threads", type=int, help=f"thread cap (env {_THREADS_ENV})")
    p.add_argument("--debug-dump", help="directory for per-rib field dumps")
    p.set_defaults(func=cmd_suppress)

    p = subparsers["phantom"] = sub.add_parser(
        "phantom", help="generate a synthetic phantom"
    )
    p.add_argument("--spec", help="phantom spec JSON")
    p.add_argument("--out-dir", required=True, help="output directory")
    for f in fields(PhantomSpec):
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f.name, type=type(f.default), default=None,
                       help=f"override spec field {f.name}")
    p.set_defaults(func=cmd_phantom)

    p = subparsers["tune"] = sub.add_parser(
        "tune", help="random grid search on one image"
    )
    p.add_argument("--image", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True, help="best-params JSON")
    p.add_argument("--trace", help="JSON-lines trace of all candidates")
    p.add_argument("--out-image", help="write the suppressed image for the best")
    p.add_argument("--objective", choices=("unsupervised", "supervised"),
                   default="unsupervised")
    p.add_argument("--gt", help="ground-truth soft image (supervised)")
    p.add_argument("--space", help="JSON with per-parameter grids")
    p.add_argument("--budget", type=int, default=50)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--config", help="JSON config with flag defaults")
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--ds", type=float, default=1.0)
    p.add_argument("--threads", type=int, help=f"thread cap (env {_THREADS_ENV})")
    p.set_defaults(func=cmd_tune)

    p = subparsers["evaluate"] = sub.add_parser(
        "evaluate", help="image-quality metrics for a pair"
    )
    p.add_argument("--image", required=True, help="prediction PNG")
    p.add_argument("--reference", required=True, help="reference PNG")
    p.add_argument("--out", help="JSON report path (also printed)")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--beta", type=float, default=DEFAULT_BETA)
    p.add_argument("--max-value", dest="max_value", type=float,
                   help="intensity range (default: from the reference file)")
    p.set_defaults(func=cmd_evaluate)
    return parser, subparsers


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = build_parser()
    try:
        if argv and argv[0] in ("suppress", "tune"):
            _apply_config_defaults(subparsers[argv[0]], argv[1:], argv[0])
        args = parser.parse_args(argv)
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # internal fault
        print(f"error: internal: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
