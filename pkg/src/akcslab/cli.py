"""Command-line surface: sense, reconstruct, coherence, blocks-check, bench.

Every command writes a JSON manifest holding the exact argv, all derived
parameters and the SHA-256 of each artifact, so a run can be reproduced
from the manifest alone (wall_clock_s is the only volatile field).

Exit codes: 0 success, 1 usage, 2 I/O, 3 numeric failure. Errors emit one
machine-parsable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import blocks
from .coherence import StudyConfig, coherence_study, write_study_csv
from .errors import (
    AkcsError,
    DegenerateColumnError,
    DivergenceError,
    InvalidDimensionError,
    NumericOverflowError,
    PgmError,
    ShapeError,
    SizeBudgetError,
    UndefinedCoherenceError,
)
from .linalg import derive_seed, idct2, make_rng
from .metrics import psnr, ssim
from .operators import (
    Measurement,
    gaussian_operator,
    load_measurement,
    load_operator,
    operator_to_json,
    sampling_plan,
    save_measurement,
)
from .pgm import image_to_matrix, load_pgm, matrix_to_image, save_pgm
from .recon import ReconConfig, ista_reconstruct

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

_DENOISER_FLAGS = {"identity": "identity", "dct": "dct_soft_threshold", "toy": "toy_blocks"}
_SCHEME_CODES = {"kcs": 0, "akcs": 1}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with code 2
        raise _UsageError(message)


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _json_value(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
    return v


def _write_json(path, obj) -> None:
    def clean(o):
        if isinstance(o, dict):
            return {k: clean(x) for k, x in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(x) for x in o]
        return _json_value(o)

    Path(path).write_text(json.dumps(clean(obj), indent=2, sort_keys=True) + "\n")


def _manifest(command: str, argv: list[str], body: dict, outputs: dict[str, str],
              started: float) -> dict:
    doc = {"command": command, "argv": list(argv), "outputs": outputs,
           "wall_clock_s": time.perf_counter() - started}
    doc.update(body)
    return doc


def _parse_int_list(text: str, count: int, what: str) -> list[int]:
    parts = [p for p in text.replace(";", ",").split(",") if p]
    if len(parts) != count:
        raise _UsageError(f"{what} needs {count} comma-separated integers, got {text!r}")
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise _UsageError(f"{what} must be integers, got {text!r}") from None


def synthetic_sparse_image(height: int, width: int, sparsity: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Random image with `sparsity` nonzero DCT coefficients, scaled to [0, 1].

    The affine rescale only touches the DC coefficient, so the result stays
    (sparsity + 1)-sparse in the DCT domain.
    """
    coeffs = np.zeros((height, width))
    flat = rng.choice(height * width, size=sparsity, replace=False)
    signs = rng.choice([-1.0, 1.0], size=sparsity)
    coeffs[np.unravel_index(flat, coeffs.shape)] = signs * rng.uniform(0.5, 1.5, size=sparsity)
    x = idct2(coeffs)
    lo, hi = x.min(), x.max()
    if hi > lo:
        x = (x - lo) / (hi - lo)
    return x


# --- sense -------------------------------------------------------------------


def _cmd_sense(args, argv) -> int:
    started = time.perf_counter()
    img = load_pgm(args.image)
    x = image_to_matrix(img)
    height, width = x.shape
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    body: dict = {"image": {"path": str(args.image), "sha256": _sha256_file(args.image),
                            "H": height, "W": width}}
    if args.operator:
        op = load_operator(args.operator)
        if op.image_shape != (height, width):
            raise ShapeError(f"operator expects image {op.image_shape}, got {(height, width)}")
        body["operator"] = {"path": str(args.operator), "sha256": _sha256_file(args.operator)}
        op_doc = None
    else:
        if args.mn:
            m, n = _parse_int_list(args.mn, 2, "--mn")
            if not (1 <= m <= height and 1 <= n <= width):
                raise _UsageError(f"--mn {m},{n} outside [1,{height}]x[1,{width}]")
        elif args.sr is not None:
            plan = sampling_plan(height, width, args.sr)
            m, n = plan.m, plan.n
        else:
            raise _UsageError("sense needs --sr or --mn (or --operator)")
        op = gaussian_operator(args.scheme, height, width, m, n, args.seed)
        op_doc = operator_to_json(op, seed=args.seed)
        _write_json(out_dir / "operator.json", op_doc)

    m, n = op.measurement_shape
    meas = Measurement(op.forward(x), op.fingerprint)
    save_measurement(out_dir / "measurement.bin", meas)

    body.update({
        "scheme": op.scheme, "H": height, "W": width, "m": m, "n": n,
        "sr_target": args.sr, "sr_achieved": op.sampling_ratio,
        "seed": args.seed, "operator_id": op.fingerprint,
    })
    outputs = {"measurement.bin": _sha256_file(out_dir / "measurement.bin")}
    if op_doc is not None:
        outputs["operator.json"] = _sha256_file(out_dir / "operator.json")
    _write_json(out_dir / "manifest.json", _manifest("sense", argv, body, outputs, started))
    return EXIT_OK


# --- reconstruct -------------------------------------------------------------


def _find_reference(args, measurement_path: Path):
    if args.reference:
        return image_to_matrix(load_pgm(args.reference))
    manifest_path = measurement_path.parent / "manifest.json"
    if manifest_path.exists():
        try:
            doc = json.loads(manifest_path.read_text())
            ref_path = Path(doc["image"]["path"])
            if ref_path.exists():
                return image_to_matrix(load_pgm(ref_path))
        except (KeyError, ValueError, OSError):
            return None
    return None


def _cmd_reconstruct(args, argv) -> int:
    started = time.perf_counter()
    op = load_operator(args.operator)
    meas = load_measurement(args.measurement)

    denoiser = _DENOISER_FLAGS[args.denoiser]
    weights = None
    if denoiser == "toy_blocks":
        weights = blocks.BlockWeights.from_seed(
            args.block_seed, channels=args.block_channels, heads=args.block_heads,
            token_dim=args.block_channels, meas_width=op.measurement_shape[1])
    rho = "auto" if args.rho == "auto" else float(args.rho)
    cfg = ReconConfig(iterations=args.iters, rho=rho, lam=args.lam, denoiser=denoiser,
                      tolerance=args.tol, record_trace=False,
                      block_weights=weights, block_downsample=args.block_downsample)
    x_hat, trace = ista_reconstruct(op, meas, cfg)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_pgm(out_path, matrix_to_image(x_hat))

    metrics = {
        "iterations_run": trace.iterations_run,
        "stopped_early": trace.stopped_early,
        "rho": trace.rho,
        "final_fidelity": trace.fidelity[-1],
        "final_objective": trace.objective[-1],
    }
    reference = _find_reference(args, Path(args.measurement))
    if reference is not None and reference.shape == x_hat.shape:
        metrics["psnr_db"] = psnr(x_hat, reference, peak=1.0)
        if min(reference.shape) >= 11:
            metrics["ssim"] = ssim(x_hat, reference)
    metrics_path = out_path.with_name(out_path.stem + ".metrics.json")
    _write_json(metrics_path, metrics)

    outputs = {out_path.name: _sha256_file(out_path),
               metrics_path.name: _sha256_file(metrics_path)}
    if args.trace:
        lines = ["iteration,objective,fidelity"]
        for i, (obj, fid) in enumerate(zip(trace.objective, trace.fidelity)):
            lines.append(f"{i},{obj!r},{fid!r}")
        Path(args.trace).write_text("\n".join(lines) + "\n")
        outputs[Path(args.trace).name] = _sha256_file(args.trace)

    body = {
        "measurement": {"path": str(args.measurement), "sha256": _sha256_file(args.measurement)},
        "operator": {"path": str(args.operator), "sha256": _sha256_file(args.operator)},
        "config": {"iterations": args.iters, "rho": args.rho, "lambda": args.lam,
                   "denoiser": args.denoiser, "tol": args.tol,
                   "block_seed": args.block_seed, "block_channels": args.block_channels,
                   "block_heads": args.block_heads, "block_downsample": args.block_downsample},
        "metrics": metrics,
    }
    manifest_path = out_path.with_name(out_path.name + ".manifest.json")
    _write_json(manifest_path, _manifest("reconstruct", argv, body, outputs, started))
    return EXIT_OK


# --- coherence ---------------------------------------------------------------


def _parse_grid(text: str) -> tuple[tuple[int, int, int, int], ...]:
    cells = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        cells.append(tuple(_parse_int_list(chunk, 4, "grid cell")))
    if not cells:
        raise _UsageError(f"empty grid spec {text!r}")
    return tuple(cells)


def _cmd_coherence(args, argv) -> int:
    started = time.perf_counter()
    cfg = StudyConfig(grid=_parse_grid(args.grid), trials=args.trials,
                      seed=args.seed, c_o=args.co)
    result = coherence_study(cfg)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_study_csv(out_path, result)

    body = {
        "grid": [list(c) for c in cfg.grid], "trials": cfg.trials,
        "seed": cfg.seed, "c_o": cfg.c_o,
        "summaries": [vars(s) for s in result.summaries],
    }
    outputs = {out_path.name: _sha256_file(out_path)}
    manifest_path = out_path.with_name(out_path.name + ".manifest.json")
    _write_json(manifest_path, _manifest("coherence", argv, body, outputs, started))
    return EXIT_OK


# --- blocks-check ------------------------------------------------------------


def blocks_check_report(seed: int, height: int, width: int, channels: int,
                        downsample: int, heads: int) -> dict:
    """Run the forward-pass invariant checks on seeded weights and inputs."""
    checks: list[dict] = []

    def record(name: str, passed: bool, detail: str = ""):
        checks.append({"name": name, "passed": bool(passed), "detail": detail})

    m, n = max(2, height // 2), max(2, width // 2)
    w = blocks.BlockWeights.from_seed(seed, channels=channels, heads=heads,
                                      token_dim=channels, meas_width=n)
    rng = make_rng(seed, 0xF00D)
    feat = rng.standard_normal((height, width, channels))
    meas = rng.standard_normal((m, n))

    ca = blocks.channel_attention_trace(feat, w)
    mc = blocks.maca_trace(feat, meas, downsample, w)

    softmax_dev = 0.0
    in_range = True
    for attn in ca.attention + [mc.forward_attention, mc.backward_attention]:
        softmax_dev = max(softmax_dev, float(np.max(np.abs(attn.sum(axis=-1) - 1.0))))
        in_range = in_range and bool(np.all(attn >= 0.0) and np.all(attn <= 1.0))
    record("softmax_rows_sum_to_one", softmax_dev <= 1e-10, f"max deviation {softmax_dev:.3e}")
    record("softmax_entries_in_unit_interval", in_range)

    dh = w.head_dim
    hull_ok = True
    for i in range(w.heads):
        vals = ca.values[:, i * dh:(i + 1) * dh]
        outs = ca.heads_output[:, i * dh:(i + 1) * dh]
        lo = vals.min(axis=1, keepdims=True) - 1e-10
        hi = vals.max(axis=1, keepdims=True) + 1e-10
        hull_ok = hull_ok and bool(np.all(outs >= lo) and np.all(outs <= hi))
    refined = mc.backward_attention @ mc.summary
    lo = mc.summary.min(axis=0) - 1e-10
    hi = mc.summary.max(axis=0) + 1e-10
    hull_ok = hull_ok and bool(np.all(refined >= lo) and np.all(refined <= hi))
    record("attention_outputs_within_value_hull", hull_ok)

    w0 = w.replace_arrays(rsca_gamma=np.float64(0.0))
    record("rsca_gamma_zero_is_identity",
           bool(np.array_equal(blocks.rsca_forward(feat, w0), feat)))

    shape_ok = all(fn(feat, w).shape == feat.shape for fn in
                   (blocks.scb_forward, blocks.channel_attention_forward,
                    blocks.rsca_forward, blocks.ctb_forward))
    shape_ok = shape_ok and mc.output.shape == feat.shape
    u = rng.standard_normal((height, width))
    shape_ok = shape_ok and blocks.toy_denoiser_stage(u, meas, w, downsample).shape == u.shape
    record("blocks_preserve_shape", shape_ok)

    w2 = blocks.BlockWeights.from_seed(seed, channels=channels, heads=heads,
                                       token_dim=channels, meas_width=n)
    again = blocks.toy_denoiser_stage(u, meas, w2, downsample)
    record("forward_passes_deterministic",
           bool(np.array_equal(again, blocks.toy_denoiser_stage(u, meas, w, downsample))))

    base = blocks.maca_trace(feat, meas, 1, w)
    scaled = downsample * downsample
    record("maca_cost_scales_with_downsample",
           mc.key_sequence_length * scaled == base.key_sequence_length
           and mc.stage1_score_ops * scaled == base.stage1_score_ops,
           f"keys {mc.key_sequence_length} vs {base.key_sequence_length} at D={downsample}")

    return {
        "seed": seed,
        "dims": {"H": height, "W": width, "C": channels, "D": downsample,
                 "heads": heads, "m": m, "n": n},
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
    }


def _cmd_blocks_check(args, argv) -> int:
    started = time.perf_counter()
    height, width, channels, downsample, heads = _parse_int_list(args.dims, 5, "--dims")
    report = blocks_check_report(args.seed, height, width, channels, downsample, heads)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out_path, report)
    outputs = {out_path.name: _sha256_file(out_path)}
    manifest_path = out_path.with_name(out_path.name + ".manifest.json")
    _write_json(manifest_path,
                _manifest("blocks-check", argv, {"report": report}, outputs, started))
    if not report["passed"]:
        _emit_error("numeric", "one or more block invariants failed")
        return EXIT_NUMERIC
    return EXIT_OK


# --- bench -------------------------------------------------------------------


def _bench_images(args) -> list[tuple[str, np.ndarray]]:
    images: list[tuple[str, np.ndarray]] = []
    if args.images:
        image_dir = Path(args.images)
        if not image_dir.is_dir():
            raise FileNotFoundError(f"image directory {image_dir} does not exist")
        for path in sorted(image_dir.glob("*.pgm")):
            images.append((path.name, image_to_matrix(load_pgm(path))))
    for idx in range(args.synthetic):
        rng = make_rng(args.seed, 0x57A9E, idx)
        images.append((f"synthetic_{idx:03d}",
                       synthetic_sparse_image(args.size, args.size, args.sparsity, rng)))
    if not images:
        raise _UsageError("bench needs --images with PGM files and/or --synthetic > 0")
    return images


def _cmd_bench(args, argv) -> int:
    started = time.perf_counter()
    srs = [float(s) for s in args.srs.split(",") if s]
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    for scheme in schemes:
        if scheme not in _SCHEME_CODES:
            raise _UsageError(f"unknown scheme {scheme!r}")
    images = _bench_images(args)

    rows = []
    for img_idx, (name, x) in enumerate(images):
        height, width = x.shape
        for sr_idx, sr in enumerate(srs):
            plan = sampling_plan(height, width, sr)
            for scheme in schemes:
                for seed_idx in range(args.seeds):
                    op_seed = derive_seed(args.seed, img_idx, sr_idx,
                                          _SCHEME_CODES[scheme], seed_idx)
                    op = gaussian_operator(scheme, height, width, plan.m, plan.n, op_seed)
                    cfg = ReconConfig(iterations=args.iters, rho=args.rho, lam=args.lam,
                                      denoiser="dct_soft_threshold", tolerance=args.tol)
                    x_hat, trace = ista_reconstruct(op, op.forward(x), cfg)
                    row = {
                        "image": name, "H": height, "W": width, "scheme": scheme,
                        "sr_target": sr, "sr_achieved": plan.achieved_ratio,
                        "m": plan.m, "n": plan.n, "seed_index": seed_idx,
                        "operator_seed": op_seed,
                        "psnr_db": psnr(x_hat, x, peak=1.0),
                        "ssim": ssim(x_hat, x) if min(height, width) >= 11 else float("nan"),
                        "iterations_run": trace.iterations_run,
                    }
                    rows.append(row)

    rows.sort(key=lambda r: (r["image"], r["sr_target"], r["scheme"], r["seed_index"]))
    header = ["image", "H", "W", "scheme", "sr_target", "sr_achieved", "m", "n",
              "seed_index", "operator_seed", "psnr_db", "ssim", "iterations_run"]
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(
            repr(r[k]) if isinstance(r[k], float) else str(r[k]) for k in header))
    summaries = []
    for scheme in sorted(schemes):
        for sr in srs:
            group = [r for r in rows if r["scheme"] == scheme and r["sr_target"] == sr]
            mean_psnr = float(np.mean([g["psnr_db"] for g in group]))
            mean_ssim = float(np.mean([g["ssim"] for g in group]))
            summaries.append({"scheme": scheme, "sr": sr, "runs": len(group),
                              "mean_psnr_db": mean_psnr, "mean_ssim": mean_ssim})
            lines.append(f"# summary scheme={scheme} sr={sr!r} runs={len(group)}"
                         f" mean_psnr_db={mean_psnr!r} mean_ssim={mean_ssim!r}")

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(lines) + "\n")

    body = {
        "images": [name for name, _ in images], "srs": srs, "schemes": schemes,
        "seeds": args.seeds, "seed": args.seed,
        "config": {"iterations": args.iters, "rho": args.rho, "lambda": args.lam,
                   "tol": args.tol, "synthetic": args.synthetic,
                   "size": args.size, "sparsity": args.sparsity},
        "summaries": summaries,
    }
    outputs = {out_path.name: _sha256_file(out_path)}
    manifest_path = out_path.with_name(out_path.name + ".manifest.json")
    _write_json(manifest_path, _manifest("bench", argv, body, outputs, started))
    return EXIT_OK


# --- driver ------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="akcslab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sense", help="compress an image into a measurement")
    p.add_argument("--image", required=True)
    p.add_argument("--scheme", choices=["kcs", "akcs"], default="kcs")
    p.add_argument("--sr", type=float, default=None)
    p.add_argument("--mn", default=None, help="explicit 'm,n' instead of --sr")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--operator", default=None,
                   help="sense through an existing operator JSON instead of drawing one")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_sense)

    p = sub.add_parser("reconstruct", help="recover an image from a measurement")
    p.add_argument("--measurement", required=True)
    p.add_argument("--operator", required=True)
    p.add_argument("--denoiser", choices=sorted(_DENOISER_FLAGS), default="dct")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--rho", default="auto")
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=0.0)
    p.add_argument("--reference", default=None, help="ground-truth PGM for metrics")
    p.add_argument("--block-seed", type=int, default=0)
    p.add_argument("--block-channels", type=int, default=8)
    p.add_argument("--block-heads", type=int, default=2)
    p.add_argument("--block-downsample", type=int, default=1)
    p.add_argument("--trace", default=None, help="write per-iteration CSV here")
    p.add_argument("--out", required=True, help="output PGM path")
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("coherence", help="Monte Carlo coherence study")
    p.add_argument("--grid", required=True, help="cells 'm,n,H,W;m,n,H,W;...'")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--co", type=float, default=1.0)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_coherence)

    p = sub.add_parser("blocks-check", help="denoiser-block invariant report")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", default="8,8,16,2,4", help="'H,W,C,D,heads'")
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=_cmd_blocks_check)

    p = sub.add_parser("bench", help="paired scheme benchmark over images")
    p.add_argument("--images", default=None, help="directory of PGM images")
    p.add_argument("--synthetic", type=int, default=0, help="add this many synthetic images")
    p.add_argument("--size", type=int, default=32, help="synthetic image side")
    p.add_argument("--sparsity", type=int, default=8, help="synthetic DCT sparsity")
    p.add_argument("--srs", default="0.25", help="comma-separated sampling ratios")
    p.add_argument("--schemes", default="kcs,akcs")
    p.add_argument("--seeds", type=int, default=1, help="operator seeds per image and SR")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    p.add_argument("--rho", default="auto")
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--tol", type=float, default=0.0)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_bench)

    return parser


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"status": "error", "kind": kind, "message": message}) + "\n")


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "rho", "auto") != "auto":
            try:
                args.rho = float(args.rho)
            except ValueError:
                raise _UsageError(f"--rho must be a number or 'auto', got {args.rho!r}") from None
        return args.func(args, argv)
    except _UsageError as exc:
        _emit_error("usage", str(exc))
        return EXIT_USAGE
    except InvalidDimensionError as exc:
        _emit_error("usage", str(exc))
        return EXIT_USAGE
    except (PgmError, FileNotFoundError, IsADirectoryError, PermissionError,
            json.JSONDecodeError) as exc:
        _emit_error("io", str(exc))
        return EXIT_IO
    except (DivergenceError, NumericOverflowError, DegenerateColumnError,
            UndefinedCoherenceError, SizeBudgetError) as exc:
        _emit_error("numeric", str(exc))
        return EXIT_NUMERIC
    except (ShapeError, ValueError) as exc:
        _emit_error("usage", str(exc))
        return EXIT_USAGE
    except OSError as exc:
        _emit_error("io", str(exc))
        return EXIT_IO


def rerun_from_manifest(manifest_path) -> int:
    """Re-execute the command recorded in a manifest (reproducibility hook)."""
    doc = json.loads(Path(manifest_path).read_text())
    return main(doc["argv"])


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
