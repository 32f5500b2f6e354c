"""Command-line interface: ``sapa <command> ...``.

Exit codes are 0 on success, 1 for runtime failures (unreadable files, failed
checks) and 2 for usage, configuration and shape errors.
"""

import argparse
import json
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.table import Table

from . import __version__
from .errors import ConfigurationError, ShapeError, TensorFormatError
from .models import CostQuery, LinearMap, RngSpec, Upsampler, Variant, as_tensor
from .services.bench import DEFAULT_VARIANTS, run_bench
from .services.complexity import (
    IMPLEMENTED,
    PRINTED_EXPRESSIONS,
    closed_form,
    cost,
    cost_table,
    default_query,
    printed_total_differs,
)
from .services.config import parse_overrides
from .services.gradcheck import finite_diff_check, random_case, sapa_op, with_corrupted_gradient
from .services.sampling import bilinear_upsample, nn_upsample
from .services.sapa import compute_kernel_map, init_params, init_subpixel, sapa_forward, subpixel_upsample
from .services.selftest import PROPERTIES, run_selftest
from .services.tensor_io import (
    bench_csv,
    gradcheck_csv,
    read_named,
    read_params,
    read_tensor,
    write_named,
    write_params,
    write_pgm,
    write_tensor,
    write_weights_txt,
)

log = logging.getLogger(__name__)

console = Console()

UPSAMPLE_VARIANTS = ("i", "b", "d", "nn", "bilinear", "pixelshuffle")


class CheckFailed(Exception):
    """A verification command found a failing property or gradient."""


def _ints(text: str, count: int, what: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ConfigurationError(f"{what} must be {count} comma-separated integers, got '{text}'") from None
    if len(values) != count:
        raise ConfigurationError(f"{what} must be {count} comma-separated integers, got '{text}'")
    return values


def _read_encoder(args) -> Optional[np.ndarray]:
    if not args.encoder:
        return None
    return as_tensor(read_tensor(args.encoder), "encoder").astype(np.float64)


def _sapa_setup(args, decoder: np.ndarray, encoder: Optional[np.ndarray]):
    cfg, opts = parse_overrides([f"variant={args.variant}", *args.config])
    if cfg.guidance and encoder is None:
        raise ConfigurationError(f"{cfg.variant.label} needs an encoder feature (--encoder) unless guidance=false")
    if args.params:
        params = read_params(args.params)
    else:
        c_enc = decoder.shape[1] if encoder is None else encoder.shape[1]
        params = init_params(cfg, decoder.shape[1], c_enc, RngSpec(opts.seed))
    if getattr(args, "save_params", None):
        write_params(args.save_params, params)
    return cfg, params


def cmd_upsample(args) -> int:
    decoder = as_tensor(read_tensor(args.decoder), "decoder")
    dtype = decoder.dtype
    x = decoder.astype(np.float64)

    if args.variant in ("i", "b", "d"):
        encoder = _read_encoder(args)
        cfg, params = _sapa_setup(args, x, encoder)
        out, _ = sapa_forward(x, encoder, cfg, params)
        label = cfg.variant.label
    else:
        cfg, opts = parse_overrides(args.config)
        if args.variant == "nn":
            out = nn_upsample(x, cfg.ratio)
        elif args.variant == "bilinear":
            out = bilinear_upsample(x, cfg.ratio, align_corners=opts.align_corners)
        else:
            if args.params:
                named = read_named(args.params)
                if "proj" not in named:
                    raise TensorFormatError(f"{args.params} has no 'proj' tensor")
                proj = LinearMap(named["proj"])
            else:
                proj = init_subpixel(x.shape[1], cfg.ratio, RngSpec(opts.seed))
            if args.save_params:
                write_named(args.save_params, {"proj": proj.weights})
            out = subpixel_upsample(x, proj, cfg.ratio)
        label = args.variant

    write_tensor(args.out, out.astype(dtype))
    console.print(f"{label}: {tuple(decoder.shape)} -> {tuple(out.shape)} written to {args.out}")
    return 0


def cmd_kernelmap(args) -> int:
    decoder = as_tensor(read_tensor(args.decoder), "decoder").astype(np.float64)
    encoder = _read_encoder(args)
    cfg, params = _sapa_setup(args, decoder, encoder)
    row, col = _ints(args.position, 2, "--position")
    kmap = compute_kernel_map(decoder, encoder, cfg, params)
    hs, ws = kmap.weights.shape[3:]
    if not (0 <= row < hs and 0 <= col < ws):
        raise ShapeError(f"position {row},{col} is outside the {hs}x{ws} output")

    prefix = args.out_prefix
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    table = Table(title=f"{cfg.variant.label} kernel at ({row}, {col})")
    table.add_column("group")
    table.add_column("slot", justify="right")
    table.add_column("weight", justify="right")
    for k in range(kmap.groups):
        suffix = "" if kmap.groups == 1 else f"_g{k}"
        for p in range(kmap.points):
            write_pgm(f"{prefix}{suffix}_{p}.pgm", kmap.weights[0, k, p])
        weights = kmap.at(row, col, group=k)
        write_weights_txt(f"{prefix}{suffix}_weights.txt", weights)
        for p, w in enumerate(weights):
            table.add_row(str(k), str(p), f"{w:.6f}")
    console.print(table)
    log.info("wrote %d kernel images with prefix %s", kmap.groups * kmap.points, prefix)
    return 0


def cmd_bench(args) -> int:
    shape = _ints(args.shape, 4, "--shape")
    variants = [v for v in args.variants.split(",") if v.strip()]
    records = run_bench(shape, args.ratio, variants, args.warmup, args.iters, args.seed)

    table = Table(title=f"Latency at {'x'.join(map(str, shape))}, x{args.ratio}")
    for name in ("upsampler", "mean ms", "std ms", "GFLOPs", "params", "status"):
        table.add_column(name, justify="left" if name == "upsampler" else "right")
    for r in records:
        table.add_row(
            r.upsampler,
            "-" if r.mean_ms is None else f"{r.mean_ms:.2f}",
            "-" if r.std_ms is None else f"{r.std_ms:.2f}",
            "-" if r.gflops is None else f"{r.gflops:.3f}",
            "-" if r.params is None else f"{r.params:,}",
            r.status,
        )
    console.print(table)
    if args.out:
        Path(args.out).write_text(bench_csv(records))
        log.info("wrote %d bench records to %s", len(records), args.out)
    return 0


def _flops_queries(args) -> list[CostQuery]:
    if args.preset and args.preset != "fig10":
        raise ConfigurationError(f"unknown flops preset '{args.preset}'")
    values = {}
    for pair in args.query or []:
        key, sep, raw = pair.partition("=")
        if not sep:
            raise ConfigurationError(f"expected KEY=VAL, got '{pair}'")
        values[key.strip()] = raw.strip()
    upsampler = values.pop("upsampler", None)
    ints = {}
    for key, raw in values.items():
        if key not in ("C", "d", "K", "S", "g", "H", "W"):
            raise ConfigurationError(f"unknown query key '{key}'")
        try:
            ints[key] = int(raw)
        except ValueError:
            raise ConfigurationError(f"{key} expects an integer, got '{raw}'") from None

    shape = {k: ints.pop(k) for k in ("C", "H", "W") if k in ints}
    if upsampler is not None:
        queries = [default_query(Upsampler.parse(upsampler), **shape)]
    else:
        queries = [r.query for r in cost_table(**shape)]
    return [CostQuery(**{**q.__dict__, **ints}) for q in queries]


def cmd_flops(args) -> int:
    reports = [cost(q) for q in _flops_queries(args)]
    for r in reports:
        if closed_form(r.query) != (r.flops, r.params):
            raise CheckFailed(f"{r.query.upsampler.value}: step sum differs from the closed form")

    if args.json:
        rows = []
        for r in reports:
            q = r.query
            rows.append({
                "upsampler": q.upsampler.value,
                "query": {k: getattr(q, k) for k in ("C", "d", "K", "S", "g", "H", "W")},
                "steps": {name: {"flops": s.flops, "params": s.params} for name, s in r.steps.items()},
                "flops": r.flops,
                "flops_per_position": r.flops_per_position,
                "gflops": r.gflops,
                "params": r.params,
                "expression": PRINTED_EXPRESSIONS[q.upsampler][0],
                "printed_total_differs": printed_total_differs(q),
                "implemented": q.upsampler in IMPLEMENTED,
            })
        console.print_json(json.dumps(rows))
        return 0

    q0 = reports[0].query
    table = Table(title=f"FLOPs and parameters at C={q0.C}, H={q0.H}, W={q0.W}")
    for name in ("upsampler", "step", "FLOPs", "params", "expression"):
        table.add_column(name, justify="right" if name in ("FLOPs", "params") else "left")
    for r in reports:
        up = r.query.upsampler
        for step, s in r.steps.items():
            table.add_row(up.value, step, f"{s.flops:,}", f"{s.params:,}", "")
        note = "" if up in IMPLEMENTED else " (cost model only)"
        if printed_total_differs(r.query):
            note += " (printed total disagrees with steps)"
        table.add_row(
            f"[bold]{up.value}[/bold]", "total", f"[bold]{r.flops:,}[/bold]", f"[bold]{r.params:,}[/bold]",
            PRINTED_EXPRESSIONS[up][0] + note,
        )
        table.add_section()
    console.print(table)
    return 0


def cmd_gradcheck(args) -> int:
    results = []
    for offset in range(args.trials):
        seed = args.seed + offset
        cfg, named = random_case(Variant(args.variant), seed)
        op = sapa_op(cfg)
        if args.inject_bug:
            op = with_corrupted_gradient(op, "decoder")
        report = finite_diff_check(op, named, rel_tol=args.tol, seed=seed, max_entries=args.max_entries)
        results.append((f"{cfg.variant.label}/seed={seed}", report))

    table = Table(title="Gradient check")
    for name in ("case", "tensor", "max rel err", "checked", "excluded", "result"):
        table.add_column(name)
    for case, report in results:
        for e in report.entries:
            table.add_row(
                case, e.tensor, f"{e.max_rel_err:.2e}", str(e.checked), str(e.excluded),
                "[green]PASS[/green]" if e.passed else "[red]FAIL[/red]",
            )
    console.print(table)
    if args.out:
        Path(args.out).write_text(gradcheck_csv(results))

    failing = [f"{case}:{name}" for case, report in results for name in report.failing]
    if failing:
        raise CheckFailed(f"gradient check failed for {', '.join(failing)}")
    return 0


def cmd_selftest(args) -> int:
    results = run_selftest(args.only)
    table = Table(title="Self-test")
    for name in ("property", "result", "seconds", "detail"):
        table.add_column(name)
    for r in results:
        table.add_row(
            r.name, "[green]PASS[/green]" if r.passed else "[red]FAIL[/red]", f"{r.seconds:.2f}", r.detail
        )
    console.print(table)
    failing = [r.name for r in results if not r.passed]
    if failing:
        raise CheckFailed(f"failed properties: {', '.join(failing)}")
    return 0


def cmd_view(args) -> int:
    from .app import SapaApp

    SapaApp(C=args.C, H=args.H, W=args.W).run()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sapa", description="Similarity-aware point affiliation upsamplers.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("upsample", help="upsample a decoder tensor file")
    p.add_argument("--variant", choices=UPSAMPLE_VARIANTS, required=True)
    p.add_argument("--decoder", required=True)
    p.add_argument("--encoder")
    p.add_argument("--params", help="parameter bundle; seeded initialization when omitted")
    p.add_argument("--save-params", help="write the parameters used to this bundle")
    p.add_argument("--config", nargs="*", default=[], metavar="KEY=VAL")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_upsample)

    p = sub.add_parser("kernelmap", help="export kernel weight maps as PGM images")
    p.add_argument("--variant", choices=("i", "b", "d"), required=True)
    p.add_argument("--decoder", required=True)
    p.add_argument("--encoder", help="required unless guidance=false")
    p.add_argument("--params")
    p.add_argument("--config", nargs="*", default=[], metavar="KEY=VAL")
    p.add_argument("--position", required=True, help="output position as row,col")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_kernelmap)

    p = sub.add_parser("bench", help="time upsamplers on random inputs")
    p.add_argument("--shape", default="1,256,120,120", help="N,C,H,W of the decoder")
    p.add_argument("--ratio", type=int, default=2)
    p.add_argument("--variants", default=",".join(DEFAULT_VARIANTS))
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV file")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("flops", help="analytic FLOPs and parameter table")
    p.add_argument("--preset", choices=("fig10",), default="fig10")
    p.add_argument("--query", nargs="*", metavar="KEY=VAL", help="upsampler, C, H, W, d, K, S, g")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("gradcheck", help="compare analytic and numerical gradients")
    p.add_argument("--variant", choices=("i", "b", "d"), default="b")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-entries", type=int, default=None)
    p.add_argument("--inject-bug", action="store_true", help="corrupt one analytic gradient entry")
    p.add_argument("--out", help="CSV file")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("selftest", help="run the property suite")
    p.add_argument("--only", nargs="*", choices=list(PROPERTIES))
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("view", help="interactive cost browser")
    p.add_argument("--C", type=int, default=256)
    p.add_argument("--H", type=int, default=120)
    p.add_argument("--W", type=int, default=120)
    p.set_defaults(func=cmd_view)
    return parser


def setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), rich_tracebacks=True)],
        force=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    setup_logging(args.verbose)

    try:
        return args.func(args)
    except (ShapeError, ConfigurationError) as e:
        console.print(f"[red]error:[/red] {escape(str(e))}")
        return 2
    except CheckFailed as e:
        console.print(f"[red]FAILED:[/red] {escape(str(e))}")
        return 1
    except (TensorFormatError, OSError) as e:
        console.print(f"[red]error:[/red] {escape(str(e))}")
        return 1
