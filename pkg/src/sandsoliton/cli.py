"""Command-line entry point.

Exit codes: 0 success, 1 failed verification or internal fault,
2 invalid input, 3 husking budget or window containment exhausted.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as fio
from .engine import SandpileState, relax, send_wave
from .errors import BudgetError, InternalConsistencyError, ValidationError
from .husking import WindowPolicy, husk_k
from .lattice import Box
from .patterns import PatternBuilder, lift_pattern_to_state, soliton, vertex_pattern
from .render import export_voxels, render, save_slice_png

log = logging.getLogger("sandsoliton")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _grain(text: str) -> tuple[tuple[int, ...], int]:
    cell, _, amount = text.partition(":")
    return _int_list(cell), int(amount) if amount else 1


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _policy(args) -> WindowPolicy:
    return WindowPolicy(None, args.margin, args.max_enlargements)


def cmd_soliton(args) -> int:
    n = args.n if args.n is not None else len(args.p)
    prof = soliton(args.p, n, args.k_budget, _policy(args))
    _emit(fio.encode_profile(prof), args.out)
    lo, hi = prof.band()
    layer = " ".join(str(int(prof.phi_at(t))) for t in range(lo, hi + 1))
    print(f"p={','.join(map(str, prof.p))} N={prof.N} q={','.join(map(str, prof.q))} layer: {layer}",
          file=sys.stderr)
    return 0


def cmd_vertex(args) -> int:
    spec = fio.decode_pattern(Path(args.spec).read_text())
    builder = PatternBuilder(args.k_budget, _policy(args))
    ph, make_state = vertex_pattern(spec, builder=builder)
    window = Box.cube(spec.n, args.window)
    _emit(fio.encode_state(make_state(window)), args.out)
    print(f"N={ph.result.stabilized_at} support={len(ph.result.support)} cells "
          f"husking window={ph.field.box}", file=sys.stderr)
    return 0


def cmd_husk(args) -> int:
    forms, field = fio.decode_field(Path(args.input).read_text())
    policy = WindowPolicy(field.box, args.margin, args.max_enlargements)
    res = husk_k(field.as_spec(), field.graph, args.k, policy)
    _emit(fio.encode_field(forms, res.field), args.out)
    print(f"k={args.k} changed={len(res.support)} cells window={res.field.box}", file=sys.stderr)
    return 0


def cmd_relax(args) -> int:
    domain = fio.decode_domain(Path(args.domain).read_text())
    state = SandpileState.uniform(domain, args.default)
    for cell, grains in args.add or []:
        state = state.add(cell, grains)
    final, H = relax(state)
    _emit(fio.encode_state(final), args.out)
    if args.toppling:
        Path(args.toppling).write_text(fio.encode_toppling(H))
    print(f"topplings={H.total()}", file=sys.stderr)
    return 0


def cmd_wave(args) -> int:
    state = fio.decode_state(Path(args.state).read_text())
    after, H = send_wave(state, args.source)
    _emit(fio.encode_state(after), args.out)
    if args.toppling:
        Path(args.toppling).write_text(fio.encode_toppling(H))
    print(f"toppled={H.total()} cells", file=sys.stderr)
    return 0


def cmd_render(args) -> int:
    state = fio.decode_state(Path(args.state).read_text())
    if args.out is None and args.voxels is None and args.png is None:
        raise ValidationError("nothing to write: give --out, --voxels or --png")
    if args.out is not None or args.png is not None:
        if args.axis is None or args.slice is None:
            raise ValidationError("slice images need --axis and --slice")
        if args.out is not None:
            _emit(render(state, args.axis, args.slice), args.out)
        if args.png is not None:
            save_slice_png(state, args.axis, args.slice, args.png)
    if args.voxels is not None:
        _emit(export_voxels(state), args.voxels)
    return 0


def cmd_verify(args) -> int:
    from .verify import run_suite

    checks = run_suite(args.suite)
    for c in checks:
        print(f"{'PASS' if c.ok else 'FAIL'} {c.name} {c.detail}".rstrip())
    failed = sum(not c.ok for c in checks)
    print(f"{len(checks) - failed} passed, {failed} failed")
    return 0 if failed == 0 else 1


def cmd_figure1(args) -> int:
    from .scenario import run_figure1

    res = run_figure1(args.out, png=not args.no_png)
    print("check,status,detail")
    for row in res.report_rows():
        print(",".join(row))
    return 0 if res.ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sandsoliton", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("--threads", type=int, default=None,
                    help="accepted for compatibility; results do not depend on it")
    sub = ap.add_subparsers(dest="command", required=True)

    def husking_opts(p):
        p.add_argument("--k-budget", type=int, default=256)
        p.add_argument("--margin", type=int, default=None)
        p.add_argument("--max-enlargements", type=int, default=6)

    p = sub.add_parser("soliton", help="soliton profile for a primitive direction")
    p.add_argument("--p", type=_int_list, required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--out", default=None)
    husking_opts(p)
    p.set_defaults(func=cmd_soliton)

    p = sub.add_parser("vertex", help="tropical vertex pattern lifted to a state")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--window", type=int, default=10, help="half-width of the output cube")
    husking_opts(p)
    p.set_defaults(func=cmd_vertex)

    p = sub.add_parser("husk", help="k-husking of a field file")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--margin", type=int, default=None)
    p.add_argument("--max-enlargements", type=int, default=6)
    p.set_defaults(func=cmd_husk)

    p = sub.add_parser("relax", help="relax a uniform state plus added grains")
    p.add_argument("--domain", required=True)
    p.add_argument("--default", type=int, required=True)
    p.add_argument("--add", type=_grain, action="append", metavar="x,y,z:g")
    p.add_argument("--out", default=None)
    p.add_argument("--toppling", default=None)
    p.set_defaults(func=cmd_relax)

    p = sub.add_parser("wave", help="send a wave from a cell")
    p.add_argument("--state", required=True)
    p.add_argument("--from", dest="source", type=_int_list, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--toppling", default=None)
    p.set_defaults(func=cmd_wave)

    p = sub.add_parser("render", help="slice image or voxel export of a state")
    p.add_argument("--state", required=True)
    p.add_argument("--axis", type=int, default=None)
    p.add_argument("--slice", type=int, default=None)
    p.add_argument("--out", default=None, help="plain PPM output")
    p.add_argument("--png", default=None, help="matplotlib PNG output")
    p.add_argument("--voxels", default=None, help="CSV of non-background cells")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("verify", help="run a self-check suite")
    p.add_argument("suite", choices=["solitons", "waves", "least-action", "patterns", "engine",
                                     "figure1", "all"])
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("figure1", help="three-dimensional relaxation scenario")
    p.add_argument("--out", default="figure1_out")
    p.add_argument("--no-png", action="store_true")
    p.set_defaults(func=cmd_figure1)
    return ap


def run_cli(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except InternalConsistencyError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
