"""Command-line front end: embed, extract, analyze and solve."""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import embedder, selector
from .cost_model import frequency_cost_table, signal_costs
from .errors import AuxDecodeError, InsufficientCapacity, JpegError
from .jpeg_codec import CoefficientImage, estimate_quality, parse_jpeg, serialize_jpeg
from .transform import decompress, psnr, read_pgm, write_pgm

SCHEMA = 1

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CAPACITY = 2
EXIT_FORMAT = 3
EXIT_AUX = 4


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; 2 means 'capacity' here, so use 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_OTHER, f"{self.prog}: error: {message}\n")


def _finite(x):
    return x if isinstance(x, (int, float)) and math.isfinite(x) else None


def _load(path) -> tuple[bytes, CoefficientImage]:
    data = Path(path).read_bytes()
    return data, parse_jpeg(data)


def _dump_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=False)
    if path in (None, "-"):
        print(text)
    else:
        Path(path).write_text(text + "\n")


def _aux_to_json(aux: embedder.AuxRecord) -> dict:
    return {"bits": embedder.from_bits(aux.to_bits()).hex(), "length": len(aux)}


def _aux_from_json(obj) -> embedder.AuxRecord:
    bits = embedder.to_bits(bytes.fromhex(obj["bits"]))[:int(obj["length"])]
    return embedder.decode_aux(bits)


def analysis_report(cover_path, cover: CoefficientImage, stego: CoefficientImage | None,
                    rep: embedder.EmbedReport | None, payload_bits: int, strategy: str, alpha: float,
                    runtime_ms: float, original=None, capacity: int | None = None, error: str | None = None):
    """One flat record describing a (cover, payload, strategy) run."""
    cover_bytes = len(serialize_jpeg(cover))
    out = {
        "cover_path": str(cover_path),
        "qf_estimate": estimate_quality(cover.luma.quant),
        "capacity_bits": rep.capacity_bits if rep else capacity,
        "payload_bits": int(payload_bits),
        "strategy": strategy,
        "alpha": alpha,
        "in_band": rep is None or "aux" not in rep.extras,
        "psnr_db": None,
        "psnr_original_db": None,
        "file_bytes_cover": cover_bytes,
        "file_bytes_stego": None,
        "scan_bits_cover": None,
        "scan_bits_stego": None,
        "increase_bits": None,
        "increase_percent": None,
        "selected_count": None,
        "aux_bits": None,
        "e_star_bits": None,
        "predicted_d": None,
        "predicted_e_bits": None,
        "hou_k": None,
        "runtime_ms": round(runtime_ms, 3),
        "error": error,
    }
    if rep is not None:
        out.update({
            "psnr_db": _finite(rep.psnr_db),
            "file_bytes_stego": len(serialize_jpeg(stego)),
            "scan_bits_cover": rep.scan_bits_cover,
            "scan_bits_stego": rep.scan_bits_stego,
            "increase_bits": rep.increase_bits,
            "increase_percent": _finite(rep.increase_percent),
            "selected_count": rep.selected_count,
            "aux_bits": rep.aux_bits,
            "e_star_bits": rep.e_star_bits,
            "predicted_d": rep.predicted_d,
            "predicted_e_bits": rep.predicted_e,
            "hou_k": rep.hou_k,
        })
        if original is not None:
            out["psnr_original_db"] = _finite(psnr(original, decompress(stego)))
    return out


# -- embed / extract -----------------------------------------------------------------

def cmd_embed(args) -> int:
    _, cover = _load(args.cover)
    payload = embedder.to_bits(Path(args.payload).read_bytes())
    start = time.perf_counter()
    try:
        stego, rep = embedder.plan_and_embed(cover, payload, args.strategy, args.alpha,
                                             hou_descending=not args.hou_ascending,
                                             in_band=args.aux_out is None)
    except InsufficientCapacity as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    Path(args.output).write_bytes(serialize_jpeg(stego))
    if args.aux_out:
        _dump_json({"schema": SCHEMA, "aux": _aux_to_json(rep.extras["aux"])}, args.aux_out)
    if args.dump_pgm:
        base = Path(args.dump_pgm)
        write_pgm(base.with_name(base.name + ".cover.pgm"), decompress(cover))
        write_pgm(base.with_name(base.name + ".stego.pgm"), decompress(stego))
    original = read_pgm(args.original) if args.original else None
    report = analysis_report(args.cover, cover, stego, rep, payload.size, args.strategy, args.alpha,
                             (time.perf_counter() - start) * 1000, original)
    if args.report:
        _dump_json({"schema": SCHEMA, **report}, args.report)
    return EXIT_OK


def cmd_extract(args) -> int:
    _, stego = _load(args.stego)
    aux = None
    if args.aux:
        aux = _aux_from_json(json.loads(Path(args.aux).read_text())["aux"])
    try:
        bits, restored = embedder.extract(stego, aux)
    except AuxDecodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_AUX
    Path(args.payload_out).write_bytes(embedder.from_bits(bits))
    if args.restored:
        Path(args.restored).write_bytes(serialize_jpeg(restored))
    return EXIT_OK


# -- analyze ---------------------------------------------------------------------------

def _analyze_one(path, payloads, strategies, alpha, in_band, seed, hou_descending):
    _, cover = _load(path)
    costs = signal_costs(cover)
    capacity = embedder.max_payload(cover, costs, in_band)
    rows, short = [], False
    for n in payloads:
        payload = np.random.default_rng([seed, n]).integers(0, 2, n).astype(np.uint8)
        for strategy in strategies:
            start = time.perf_counter()
            try:
                stego, rep = embedder.plan_and_embed(cover, payload, strategy, alpha,
                                                     hou_descending=hou_descending, in_band=in_band)
            except InsufficientCapacity as exc:
                short = True
                rows.append(analysis_report(path, cover, None, None, n, strategy, alpha,
                                            (time.perf_counter() - start) * 1000,
                                            capacity=capacity, error=str(exc)))
                rows[-1]["in_band"] = in_band
                continue
            rows.append(analysis_report(path, cover, stego, rep, n, strategy, alpha,
                                        (time.perf_counter() - start) * 1000))
    table = frequency_cost_table(cover.luma.quant).round(12).tolist()
    return rows, short, {"cover_path": str(path), "frequency_costs": table}, costs


def cmd_analyze(args) -> int:
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    bad = [s for s in strategies if s not in embedder.STRATEGIES]
    if bad:
        print(f"error: unknown strategies {bad}", file=sys.stderr)
        return EXIT_OTHER
    payloads = args.payload_bits or [0]
    jobs = [(p, payloads, strategies, args.alpha, not args.out_of_band, args.seed, not args.hou_ascending)
            for p in args.cover]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_analyze_one, *zip(*jobs)))
    else:
        results = [_analyze_one(*job) for job in jobs]
    reports, tables, short = [], [], False
    for rows, s, table, costs in results:
        reports.extend(rows)
        tables.append(table)
        short |= s
    if args.costs_csv:
        if len(results) != 1:
            print("error: --costs-csv needs exactly one cover", file=sys.stderr)
            return EXIT_OTHER
        with open(args.costs_csv, "w", newline="") as fh:
            results[0][3].to_csv(fh)
    _dump_json({"schema": SCHEMA, "reports": reports, "frequency_tables": tables}, args.json)
    return EXIT_CAPACITY if short else EXIT_OK


# -- solve -------------------------------------------------------------------------------

def cmd_solve(args) -> int:
    with open(args.problem) as fh:
        problem = selector.read_problem(fh)
    if args.alpha is not None:
        problem.alpha = args.alpha
    if args.brute_force:
        v = selector.brute_force_select(problem)
    else:
        v = selector.select_signals(problem)
    _dump_json({
        "schema": SCHEMA,
        "V": [int(b) for b in v.bits],
        "objective_d": v.objective_d,
        "objective_e": v.objective_e,
        "capacity": v.capacity,
        "e_star": selector.min_expansion(problem),
    }, args.json)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jpegrdh", description="Reversible data hiding in baseline JPEG images.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("embed", help="hide a payload file in a cover JPEG")
    p.add_argument("--cover", required=True)
    p.add_argument("--payload", required=True, help="binary file, read MSB-first")
    p.add_argument("--output", required=True)
    p.add_argument("--strategy", choices=embedder.STRATEGIES, default="multiobj")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--report", help="write a JSON report here ('-' for stdout)")
    p.add_argument("--original", help="8-bit PGM raster for an extra PSNR against the original")
    p.add_argument("--dump-pgm", metavar="PREFIX", help="write PREFIX.cover.pgm and PREFIX.stego.pgm")
    p.add_argument("--aux-out", help="keep V out of the image and write it to this JSON file")
    p.add_argument("--hou-ascending", action="store_true", help="rank Hou frequencies low to high")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("extract", help="recover the payload and the cover")
    p.add_argument("--stego", required=True)
    p.add_argument("--payload-out", required=True)
    p.add_argument("--restored", help="write the restored cover JPEG here")
    p.add_argument("--aux", help="aux JSON written by 'embed --aux-out'")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("analyze", help="sweep payloads and strategies, report PSNR and size growth")
    p.add_argument("--cover", required=True, nargs="+")
    p.add_argument("--payload-bits", type=int, nargs="+", action="extend", metavar="N")
    p.add_argument("--strategies", default=",".join(embedder.STRATEGIES))
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--json", default="-")
    p.add_argument("--costs-csv", help="per-block r, d, e table for a single cover")
    p.add_argument("--out-of-band", action="store_true", help="do not spend capacity on carrying V")
    p.add_argument("--seed", type=int, default=0, help="seed for the random test payloads")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--hou-ascending", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("solve", help="solve a selection problem in the text exchange format")
    p.add_argument("--problem", required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--brute-force", action="store_true")
    p.add_argument("--json", default="-")
    p.set_defaults(func=cmd_solve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except JpegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except AuxDecodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_AUX
    except Exception as exc:  # noqa: BLE001 - report and map to the generic exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
