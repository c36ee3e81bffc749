"""Command-line front end.

Subcommands mirror the experiments: ratio curves (fig1), null-space
constants (fig2), block-isometry constants (rip), error decay profiles
(decay), and the image pipeline (sense, decode, roundtrip). Every command
is a pure function of its flags and seed; serial runs with identical
flags produce byte-identical outputs. Experiment commands write a CSV and
a JSON sidecar (same path plus ".json") echoing the full configuration.

Analysis commands map --matrix subsample to the DCT-composed operator,
since a raw subsampling matrix is maximally coherent with the model
basis; image commands subsample pixels directly.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import analysis, imaging
from .gaussian_model import SpectralGaussian, power_decay_spectrum
from .rng import SeededRng

_ANALYSIS_KIND = {
    "gaussian": "gaussian",
    "bernoulli": "bernoulli",
    "subsample": "subsample-dct",
}


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="statcs",
        description="Statistical compressive sensing experiments and image pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, out_required=True):
        p.add_argument("--seed", type=int, default=0, help="base RNG seed")
        p.add_argument("--threads", type=int, default=1, help="worker cap; 1 = serial")
        p.add_argument("--out", required=out_required, help="output path")

    fig1 = sub.add_parser("fig1", help="decoder MSE / top-k oracle ratio curves")
    fig1.add_argument("--n", type=int, default=64)
    fig1.add_argument("--alpha", type=float, help="fix the decay exponent; sweep k")
    fig1.add_argument("--k", type=int, help="fix k; sweep the decay exponent")
    fig1.add_argument("--trials", type=int, default=2000)
    fig1.add_argument(
        "--matrix", choices=sorted(_ANALYSIS_KIND), default="gaussian"
    )
    add_common(fig1)

    fig2 = sub.add_parser("fig2", help="null-space constant c0 = 1 + b/a vs k at M=k")
    fig2.add_argument("--n", type=int, default=64)
    fig2.add_argument("--alpha", type=float, default=3.0)
    fig2.add_argument("--k", type=int, help="single k instead of the default sweep")
    fig2.add_argument("--trials", type=int, default=10000)
    fig2.add_argument(
        "--matrix", choices=sorted(_ANALYSIS_KIND), default="gaussian"
    )
    add_common(fig2)

    rip = sub.add_parser("rip", help="block isometry constant of one matrix draw")
    rip.add_argument("--n", type=int, default=64)
    rip.add_argument("--k", type=int, required=True)
    rip.add_argument("--rate", type=float, default=0.5, help="M = round(rate * N)")
    rip.add_argument(
        "--matrix", choices=sorted(_ANALYSIS_KIND), default="gaussian"
    )
    add_common(rip)

    decay = sub.add_parser("decay", help="per-coordinate mean |error| profile")
    decay.add_argument("--n", type=int, default=64)
    decay.add_argument("--alpha", type=float, default=3.0)
    decay.add_argument("--rate", type=float, default=0.25, help="M = round(rate * N)")
    decay.add_argument("--trials", type=int, default=10000)
    decay.add_argument(
        "--matrix", choices=sorted(_ANALYSIS_KIND), default="gaussian"
    )
    add_common(decay)

    sense = sub.add_parser("sense", help="measure image patches to a JSONL file")
    sense.add_argument("--in", dest="in_path", required=True, help="input PGM")
    sense.add_argument("--rate", type=float, default=0.25)
    sense.add_argument(
        "--matrix",
        choices=sorted(imaging.IMAGE_MATRIX_KINDS),
        default="subsample",
    )
    sense.add_argument("--stride", type=int, default=8, help="sensing stride")
    add_common(sense)

    decode = sub.add_parser("decode", help="reconstruct an image from measurements")
    decode.add_argument("--in", dest="in_path", required=True, help="measurements JSONL")
    decode.add_argument("--components", type=int, default=20)
    decode.add_argument("--iters", type=int, default=5)
    decode.add_argument(
        "--stride", type=int, default=8, help="reconstruction stride; 1 = overlapped"
    )
    add_common(decode)

    rt = sub.add_parser("roundtrip", help="sense + decode + PSNR against the input")
    rt.add_argument("--in", dest="in_path", required=True, help="input PGM")
    rt.add_argument("--rate", type=float, default=0.25)
    rt.add_argument(
        "--matrix",
        choices=sorted(imaging.IMAGE_MATRIX_KINDS),
        default="subsample",
    )
    rt.add_argument("--components", type=int, default=20)
    rt.add_argument("--iters", type=int, default=5)
    rt.add_argument(
        "--stride", type=int, default=8, help="reconstruction stride; 1 = overlapped"
    )
    add_common(rt)

    return parser


def _config_echo(args: argparse.Namespace) -> dict:
    cfg = {}
    for key, value in vars(args).items():
        cfg[key] = value if not isinstance(value, (list, tuple)) else list(value)
    return cfg


def _write_sidecar(out_path: str, payload: dict) -> None:
    with open(str(out_path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def _json_psnr(value: float) -> object:
    return value if value != float("inf") else "infinity"


def _trace_records(trace) -> list[dict]:
    return [
        {
            "iteration": it.iteration,
            "total_log_posterior": it.total_log_posterior,
            "assignment_change_count": it.assignment_change_count,
            "flagged_patch_count": it.flagged_patch_count,
        }
        for it in trace.iterations
    ]


def _run_fig1(args) -> dict:
    if (args.alpha is None) == (args.k is None):
        raise _UsageError(
            "fig1 needs exactly one of --alpha (sweep k) or --k (sweep alpha)"
        )
    rng = SeededRng(args.seed)
    kind = _ANALYSIS_KIND[args.matrix]
    if args.alpha is not None:
        ks = [k for k in range(2, 33, 2) if k < args.n]
        curve = analysis.ratio_vs_k(
            args.n, args.alpha, ks, args.trials, rng, kind, threads=args.threads
        )
    else:
        alphas = [1.0 + 0.25 * i for i in range(13)]
        curve = analysis.ratio_vs_alpha(
            args.n, args.k, alphas, args.trials, rng, kind, threads=args.threads
        )
    analysis.write_ratio_curve_csv(curve, args.out)
    return {"points": len(curve.points), "notes": list(curve.notes)}


def _run_fig2(args) -> dict:
    rng = SeededRng(args.seed)
    kind = _ANALYSIS_KIND[args.matrix]
    model = SpectralGaussian.from_spectrum(power_decay_spectrum(args.n, args.alpha))
    ks = [args.k] if args.k is not None else [k for k in range(2, 21, 2) if k < args.n]
    reports = [
        analysis.rip_expectation_constants(
            model,
            kind,
            k,
            args.trials,
            rng.child(i),
            method="closed-form",
            m=k,
            threads=args.threads,
        )
        for i, k in enumerate(ks)
    ]
    analysis.write_c0_sweep_csv(reports, args.out)
    return {"c0": {str(r.k): r.c0 for r in reports}}


def _run_rip(args) -> dict:
    m = int(round(args.rate * args.n))
    if m < 1:
        raise _UsageError("rate rounds to zero measurements")
    phi = analysis.draw_matrix(
        _ANALYSIS_KIND[args.matrix], m, args.n, SeededRng(args.seed)
    )
    delta = analysis.linear_rip_constant(phi, args.k)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write("k,delta\n")
        fh.write(f"{args.k},{delta:.9g}\n")
    return {"delta": delta, "m": m}


def _run_decay(args) -> dict:
    m = int(round(args.rate * args.n))
    if m < 1:
        raise _UsageError("rate rounds to zero measurements")
    model = SpectralGaussian.from_spectrum(power_decay_spectrum(args.n, args.alpha))
    profile = analysis.error_decay_profile(
        model,
        _ANALYSIS_KIND[args.matrix],
        m,
        args.trials,
        SeededRng(args.seed),
        threads=args.threads,
    )
    analysis.write_decay_profile_csv(profile, args.out)
    return {"monotone": profile.monotone, "m": m, "excluded": profile.excluded}


def _run_sense(args) -> dict:
    image = imaging.read_pgm(args.in_path)
    measurements = imaging.sense_image(
        image, 8, args.stride, args.matrix, args.rate, SeededRng(args.seed)
    )
    meta = {
        "width": image.width,
        "height": image.height,
        "patch_side": 8,
        "stride": args.stride,
        "rate": args.rate,
        "matrix": args.matrix,
        "seed": args.seed,
    }
    imaging.write_measurements_jsonl(args.out, measurements, meta)
    return {"patches": len(measurements), "m": measurements[0].phi.rows}


def _run_decode(args) -> dict:
    meta, measurements = imaging.read_measurements_jsonl(args.in_path)
    side = int(meta["patch_side"])
    if int(meta["stride"]) != side:
        raise ValueError("decode requires measurements sensed non-overlapped")
    image, trace = imaging.reconstruct_image(
        measurements,
        int(meta["width"]),
        int(meta["height"]),
        side,
        args.stride,
        args.components,
        args.iters,
        SeededRng(args.seed),
    )
    imaging.write_pgm(image, args.out)
    return {"em_trace": _trace_records(trace)}


def _run_roundtrip(args) -> dict:
    image = imaging.read_pgm(args.in_path)
    rng = SeededRng(args.seed)
    measurements = imaging.sense_image(image, 8, 8, args.matrix, args.rate, rng.child(0))
    recon, trace = imaging.reconstruct_image(
        measurements,
        image.width,
        image.height,
        8,
        args.stride,
        args.components,
        args.iters,
        rng.child(1),
    )
    imaging.write_pgm(recon, args.out)
    return {
        "psnr_db": _json_psnr(imaging.psnr(image, recon)),
        "em_trace": _trace_records(trace),
    }


_HANDLERS = {
    "fig1": _run_fig1,
    "fig2": _run_fig2,
    "rip": _run_rip,
    "decay": _run_decay,
    "sense": _run_sense,
    "decode": _run_decode,
    "roundtrip": _run_roundtrip,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        results = _HANDLERS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command != "sense":
        _write_sidecar(args.out, {"config": _config_echo(args), "results": results})
    print(f"{args.command}: wrote {args.out}")
    return 0


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))
