"""Command-line front end: `hdqkd <command> [options]`.

Commands compose through files: each run writes its outputs plus a
resolved-config snapshot (JSON) into the output directory, sufficient to
reproduce the run bit-exactly.  A JSON config file supplies defaults per
command; explicit flags win.

Exit codes: 0 success, 1 computation failed after validation, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, keyrate, mub, optics, protocol
from .errors import (
    HdqkdError,
    InsufficientDataError,
    InvalidConfigError,
    NoThresholdError,
    SamplingError,
)

CONFIG_VERSION = 1

EXIT_OK = 0
EXIT_COMPUTE = 1
EXIT_USAGE = 2


def _echo(args, *parts) -> None:
    if not getattr(args, "quiet", False):
        print(*parts)


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("HDQKD_OUT") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _snapshot(args, out: Path, extra: dict | None = None) -> None:
    """Record everything needed to reproduce this run."""
    params = {
        k: v
        for k, v in vars(args).items()
        if k not in ("func", "config") and not k.startswith("_")
    }
    doc = {
        "version": CONFIG_VERSION,
        "package_version": __version__,
        "generator": protocol.GENERATOR_ID,
        "command": args.command,
        "params": params,
    }
    doc.update(extra or {})
    with open(out / "resolved_config.json", "w") as fh:
        json.dump(doc, fh, indent=2, default=str)


def _load_config_section(path: str, command: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfigError(f"cannot read config {path}: {exc}")
    section = doc.get(command, {})
    if not isinstance(section, dict):
        raise InvalidConfigError(f"config section '{command}' must be an object")
    return section


def _parse_range(text: str, n_default: int = 100):
    """'lo:hi' or 'lo:hi:n' -> numpy grid."""
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise InvalidConfigError(f"range must be lo:hi or lo:hi:n, got '{text}'")
    lo, hi = float(parts[0]), float(parts[1])
    n = int(parts[2]) if len(parts) == 3 else n_default
    return np.linspace(lo, hi, n)


def _build_bases(d: int, family: str) -> list[mub.Basis]:
    if family == "wh-all":
        return list(mub.full_mub_set(d))
    if family == "sqrt-pair":
        return list(mub.sqrt_mub_pair(d))
    if family == "comp-dft":
        return [mub.computational_basis(d), mub.dft_basis(d)]
    if family == "dft":
        return [mub.dft_basis(d)]
    if family == "computational":
        return [mub.computational_basis(d)]
    raise InvalidConfigError(f"unknown basis family '{family}'")


def _default_alignments(family: str, n_bases: int) -> list[str]:
    if family == "sqrt-pair":
        return ["row", "col"]
    return ["row"] * n_bases


# ---------------------------------------------------------------------------
# mub


def _basis_filename(basis: mub.Basis) -> str:
    tag = basis.label.lower().replace(":", "_").replace("=", "").replace("-", "_")
    return f"basis_{tag}.json"


def cmd_mub(args) -> int:
    out = _out_dir(args)
    if args.action == "gen":
        bases = _build_bases(args.d, args.family)
        for basis in bases:
            basis.save_json(out / _basis_filename(basis))
            _echo(args, f"wrote {out / _basis_filename(basis)}")
        _snapshot(args, out)
        return EXIT_OK

    # check
    if not args.files:
        raise InvalidConfigError("mub check needs at least one basis file")
    loaded = []
    for path in args.files:
        try:
            with open(path) as fh:
                doc = json.load(fh)
            amps = np.asarray(doc["re"], dtype=float) + 1j * np.asarray(doc["im"], dtype=float)
            loaded.append((path, int(doc["dim"]), str(doc.get("label", "")), amps))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InvalidConfigError(f"cannot parse basis file {path}: {exc}")
    failed = False
    for path, d, label, amps in loaded:
        dev = mub.unitarity_deviation(amps)
        ok = dev <= args.unitarity_tol
        failed |= not ok
        _echo(args, f"{path} [{label}]: unitarity deviation {dev:.3e} "
              f"({'ok' if ok else 'FAIL'})")
    for i in range(len(loaded)):
        for j in range(i + 1, len(loaded)):
            pi, di, li, ai = loaded[i]
            pj, dj, lj, aj = loaded[j]
            if di != dj:
                _echo(args, f"{li} vs {lj}: dimension mismatch, skipped")
                continue
            table = np.abs(ai.conj().T @ aj) ** 2
            dev = float(np.abs(table - 1.0 / di).max())
            ok = dev <= args.unbiased_tol
            failed |= not ok
            _echo(args, f"{li or pi} vs {lj or pj}: unbiasedness deviation "
                  f"{dev:.3e} ({'ok' if ok else 'FAIL'})")
    return EXIT_COMPUTE if failed else EXIT_OK


# ---------------------------------------------------------------------------
# optics


def _design_geometry(args):
    grid = optics.GridSpec(args.nx, args.ny, args.pitch, args.wavelength)
    arrangement = args.arrangement
    if arrangement == "auto":
        arrangement = "grid" if math.isqrt(args.d) ** 2 == args.d and args.d > 1 else "line"
    layout = optics.ApertureLayout(args.d, args.aperture_radius, args.aperture_spacing,
                                   arrangement)
    modes = optics.make_aperture_modes(layout, grid)
    # Fail now, with the remedy, rather than mid-optimization.  The
    # propagated detection pass runs unpadded, so check that bound too.
    pads = [args.pad_factor] + ([1] if args.detection == "propagated" else [])
    z_max = min(optics.max_propagation_distance(grid, p) for p in pads)
    if args.plane_spacing > z_max:
        raise SamplingError(
            f"plane spacing {args.plane_spacing} m exceeds the grid's "
            f"anti-aliasing bound {z_max:.4g} m; enlarge nx/ny or the pitch"
        )
    return grid, layout, modes


def _design_targets(args, modes):
    d = args.d
    if args.target == "identity":
        coeff = np.eye(d, dtype=complex)
    elif args.target == "swap":
        coeff = np.eye(d, dtype=complex)[::-1]
    elif args.target == "dft":
        coeff = mub.dft_basis(d).amplitudes
    elif args.target in ("row-dft", "col-dft"):
        pair = mub.sqrt_mub_pair(d)
        coeff = pair[0 if args.target == "row-dft" else 1].amplitudes
    else:
        raise InvalidConfigError(f"unknown target transformation '{args.target}'")
    # Sorter convention: incoming basis state m ends up in port m, so
    # input mode n maps to sum_m conj(coeff[n, m]) * port_m.
    targets = [optics.superpose(modes, coeff[n, :].conj()) for n in range(d)]
    intended = coeff.conj().T
    return targets, intended


def _detection_modes(args, grid, layout, modes, planes):
    if args.detection == "disks":
        det_layout = optics.ApertureLayout(
            layout.count, args.detection_radius, layout.spacing, layout.arrangement
        )
        return optics.make_aperture_modes(det_layout, grid)
    # Default: input modes carried to the detection plane with the exact
    # periodic transform (mask-free pass), which keeps them orthonormal.
    zero = optics.PhaseMaskStack(
        grid, np.zeros((planes, grid.nx, grid.ny)), args.plane_spacing
    )
    return [optics.forward_pass(zero, m, pad_factor=1) for m in modes]


def cmd_optics(args) -> int:
    out = _out_dir(args)
    grid, layout, modes = _design_geometry(args)
    targets, intended = _design_targets(args, modes)

    if args.action == "design":
        stack = optics.wavefront_match(
            modes, targets, args.planes, args.plane_spacing,
            iterations=args.iterations, pad_factor=args.pad_factor,
        )
        optics.save_stack(stack, out / "stack.mplc")
        _echo(args, f"wrote {out / 'stack.mplc'}")
    else:  # eval
        stack = optics.load_stack(args.stack)
        if stack.grid != grid:
            raise InvalidConfigError(
                "stack grid does not match the configured geometry"
            )

    outputs = _detection_modes(args, grid, layout, modes, stack.planes)
    transfer = optics.transfer_matrix(stack, modes, outputs, pad_factor=args.pad_factor)
    metrics = optics.sorter_metrics(transfer, intended=intended)
    metrics.save_json(out / "metrics.json")
    objective = optics.matching_objective(stack, modes, targets, pad_factor=args.pad_factor)
    _echo(args, f"objective {objective:.4f}  fidelity {metrics.fidelity:.4f}  "
          f"crosstalk {metrics.mean_crosstalk:.4f}  "
          f"loss {metrics.insertion_loss_db:.3f} dB")
    if args.pgm:
        for p in range(1, stack.planes + 1):
            optics.save_mask_pgm(stack, p, out / f"mask_{p:02d}.pgm")
        _echo(args, f"wrote {stack.planes} PGM masks")
    _snapshot(args, out, {"objective": objective})
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def _noise_from_args(args) -> protocol.NoiseModel | None:
    if args.Eu is not None or args.Eb is not None:
        return protocol.NoiseModel.from_components(args.Eu or 0.0, args.Eb or 0.0)
    if args.Et:
        if args.block_fraction:
            return protocol.NoiseModel("block_biased", args.Et, args.block_fraction)
        return protocol.NoiseModel("uniform", args.Et)
    return None


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    bases = _build_bases(args.d, args.family)
    if len(bases) < 1:
        raise InvalidConfigError("simulation needs at least one basis")
    noise = _noise_from_args(args)
    alignments = (
        args.alignments.split(",") if args.alignments
        else _default_alignments(args.family, len(bases))
    )

    table = protocol.ideal_prob_table(bases, [b.conjugate() for b in bases])
    if noise is not None and noise.total_error > 0.0:
        table = protocol.apply_noise(table, noise, alignments)

    if args.pair_rate == 0.0 and args.accidental_rate == 0.0:
        _echo(args, "warning: zero pair and accidental rates, counts will be all zero")
    counts = protocol.sample_counts(
        table, args.pair_rate, args.time, args.accidental_rate, seed=args.seed
    )
    protocol.save_counts_csv(counts, out / "counts.csv")
    _echo(args, f"wrote {out / 'counts.csv'} "
          f"({int(counts.counts.sum())} coincidences)")

    session = protocol.simulate_session(
        bases, args.rounds, noise=noise, seed=args.seed, alignments=alignments
    )
    session.save_jsonl(out / "session.jsonl")
    _echo(args, f"wrote {out / 'session.jsonl'} "
          f"(sifted {session.sifted_fraction:.3f}, QBER {session.qber:.4f})")
    _snapshot(args, out, {"observed_qber": session.qber})
    return EXIT_OK


# ---------------------------------------------------------------------------
# keyrate


def _errors_from_counts(args):
    counts = protocol.load_counts_csv(args.counts)
    table = protocol.normalize_counts(counts)
    d = table.dim
    n_matched = min(table.bases_alice, table.bases_bob)
    square = math.isqrt(d) ** 2 == d and d >= 4
    if not square:
        # No block structure to separate; report the total error as uniform.
        stats = keyrate.subset_stats(table)
        return d, float(stats.E), 0.0
    alignments = (
        args.alignments.split(",") if args.alignments
        else _default_alignments("sqrt-pair" if n_matched == 2 else "", n_matched)
    )
    parts = [
        protocol.decompose_errors(table, k + 1, alignments[k])
        for k in range(n_matched)
    ]
    e_u = float(np.mean([p.uniform_error for p in parts]))
    e_b = float(np.mean([p.block_error for p in parts]))
    return d, e_u, e_b


def cmd_keyrate(args) -> int:
    out = _out_dir(args)

    if args.curve == "thresholds":
        lo, hi = (int(x) for x in args.d_range.split(":")[:2])
        rows = keyrate.threshold_curve(range(lo, hi + 1))
        path = out / "thresholds.csv"
        with open(path, "w") as fh:
            fh.write("d,block_fraction,threshold\n")
            for row in rows:
                fh.write(f"{row['d']},{row['block_fraction']!r},{row['threshold']!r}\n")
        with open(str(path) + ".meta.json", "w") as fh:
            json.dump({"bound": "two_mub", "d_range": args.d_range,
                       "root_tol": keyrate.ROOT_TOL}, fh, indent=2)
        _echo(args, f"wrote {path} ({len(rows)} rows)")
        _snapshot(args, out)
        return EXIT_OK

    if args.counts:
        d, e_u, e_b = _errors_from_counts(args)
        bound = args.bound or ("two-mub-block" if e_b > 0 else "two-mub-uniform")
    else:
        d = args.d
        if d is None:
            raise InvalidConfigError("need --d unless reading --counts")
        bound = args.bound or "two-mub-uniform"
        e_u, e_b = args.Eu or 0.0, args.Eb or 0.0
        if args.E is not None:
            e_u, e_b = args.E, 0.0

    bound_key = bound.replace("-", "_")
    if bound_key == "depolarizing":
        bound_key = "depolarizing_all_mubs"
    if bound_key == "depolarizing_all_mubs":
        report = keyrate.rate_depolarizing(d, e_u + e_b)
    elif bound_key in ("two_mub_uniform", "two_mub_block"):
        if bound_key == "two_mub_uniform" and e_b > 0:
            e_u, e_b = e_u + e_b, 0.0
        report = keyrate.rate_two_mub(d, e_u, e_b)
    else:
        raise InvalidConfigError(f"unknown bound '{bound}'")

    _echo(args, f"bound {report.bound}  d={report.dim}  "
          f"rate {report.rate:.4f} bits/sifted photon  "
          f"threshold {report.threshold:.4f}")
    report.save_json(out / "report.json")
    keyrate.save_report_csv(report, out / "report.csv")

    if args.curve == "rate":
        grid = _parse_range(args.errors)
        total = e_u + e_b
        frac = e_b / total if total > 0 else 0.0
        rows = keyrate.rate_curve(report.bound, d, grid, block_fraction=frac)
        keyrate.save_curve_csv(
            out / "curve.csv", rows,
            {"bound": report.bound, "d": d, "block_fraction": frac,
             "root_tol": keyrate.ROOT_TOL},
        )
        _echo(args, f"wrote {out / 'curve.csv'} ({len(rows)} rows)")
    _snapshot(args, out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser, _ = _build_parser_with_map()
    return parser


def _build_parser_with_map():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file with per-command defaults")
    common.add_argument("--out", help="output directory (default $HDQKD_OUT or .)")
    common.add_argument("--seed", type=int, default=0, help="RNG seed")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    parser = argparse.ArgumentParser(
        prog="hdqkd",
        description="High-dimensional QKD design and certification toolkit",
    )
    parser.add_argument("--version", action="version", version=f"hdqkd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_mub = sub.add_parser("mub", parents=[common], help="generate or check MUB files")
    p_mub.add_argument("action", choices=["gen", "check"])
    p_mub.add_argument("files", nargs="*", help="basis JSON files (check)")
    p_mub.add_argument("--d", type=int, default=5, help="dimension")
    p_mub.add_argument("--family", default="wh-all",
                       choices=["wh-all", "sqrt-pair", "comp-dft", "dft", "computational"])
    p_mub.add_argument("--unitarity-tol", type=float, default=mub.UNITARITY_TOL)
    p_mub.add_argument("--unbiased-tol", type=float, default=mub.UNBIASED_TOL)
    p_mub.set_defaults(func=cmd_mub)

    p_opt = sub.add_parser("optics", parents=[common],
                           help="design or evaluate a converter stack")
    p_opt.add_argument("action", choices=["design", "eval"])
    p_opt.add_argument("--stack", help="stack container to evaluate (eval)")
    p_opt.add_argument("--d", type=int, default=5, help="number of modes")
    p_opt.add_argument("--arrangement", default="auto", choices=["auto", "grid", "line"])
    p_opt.add_argument("--target", default="dft",
                       choices=["identity", "swap", "dft", "row-dft", "col-dft"])
    p_opt.add_argument("--planes", type=int, default=10)
    p_opt.add_argument("--plane-spacing", type=float, default=43.5e-3, help="meters")
    p_opt.add_argument("--iterations", type=int, default=30)
    p_opt.add_argument("--nx", type=int, default=192)
    p_opt.add_argument("--ny", type=int, default=192)
    p_opt.add_argument("--pitch", type=float, default=15e-6, help="meters per pixel")
    p_opt.add_argument("--wavelength", type=float, default=810e-9, help="meters")
    p_opt.add_argument("--aperture-radius", type=float, default=100e-6)
    p_opt.add_argument("--aperture-spacing", type=float, default=300e-6)
    p_opt.add_argument("--pad-factor", type=int, default=2)
    p_opt.add_argument("--detection", default="propagated", choices=["propagated", "disks"])
    p_opt.add_argument("--detection-radius", type=float, default=50e-6,
                       help="fiber-core disk radius for --detection disks")
    p_opt.add_argument("--pgm", action="store_true", help="also dump masks as 16-bit PGM")
    p_opt.set_defaults(func=cmd_optics)

    p_sim = sub.add_parser("simulate", parents=[common], help="simulate a QKD session")
    p_sim.add_argument("--d", type=int, default=25)
    p_sim.add_argument("--family", default="sqrt-pair",
                       choices=["wh-all", "sqrt-pair", "comp-dft"])
    p_sim.add_argument("--Et", type=float, default=0.0, help="total matched-basis error")
    p_sim.add_argument("--block-fraction", type=float, default=0.0)
    p_sim.add_argument("--Eu", type=float, default=None, help="uniform error component")
    p_sim.add_argument("--Eb", type=float, default=None, help="block error component")
    p_sim.add_argument("--alignments", help="comma list of row/col per basis")
    p_sim.add_argument("--rounds", type=int, default=100000)
    p_sim.add_argument("--pair-rate", type=float, default=1e4, help="pairs per second")
    p_sim.add_argument("--time", type=float, default=100.0, help="integration seconds")
    p_sim.add_argument("--accidental-rate", type=float, default=0.0)
    p_sim.set_defaults(func=cmd_simulate)

    p_kr = sub.add_parser("keyrate", parents=[common],
                          help="compute rate bounds and thresholds")
    p_kr.add_argument("--d", type=int, default=None)
    p_kr.add_argument("--bound",
                      choices=["depolarizing", "two-mub-uniform", "two-mub-block"])
    p_kr.add_argument("--E", type=float, default=None, help="mean error over all bases")
    p_kr.add_argument("--Eu", type=float, default=None)
    p_kr.add_argument("--Eb", type=float, default=None)
    p_kr.add_argument("--counts", help="counts CSV to normalize, decompose and bound")
    p_kr.add_argument("--alignments", help="comma list of row/col per matched basis")
    p_kr.add_argument("--curve", choices=["rate", "thresholds"])
    p_kr.add_argument("--errors", default="0:0.5:101", help="lo:hi:n grid for --curve rate")
    p_kr.add_argument("--d-range", default="2:32", help="lo:hi for --curve thresholds")
    p_kr.set_defaults(func=cmd_keyrate)
    return parser, {"mub": p_mub, "optics": p_opt, "simulate": p_sim, "keyrate": p_kr}


def main(argv=None) -> int:
    parser, submap = _build_parser_with_map()
    try:
        args = parser.parse_args(argv)
        if args.config:
            # Install the config section as the subcommand's defaults and
            # re-parse, so precedence is built-in < config file < flags.
            section = _load_config_section(args.config, args.command)
            sub = submap[args.command]
            valid = {a.dest for a in sub._actions}
            renamed = {k.replace("-", "_"): v for k, v in section.items()}
            unknown = set(renamed) - valid
            if unknown:
                raise InvalidConfigError(
                    f"unknown config keys for {args.command}: {sorted(unknown)}"
                )
            sub.set_defaults(**renamed)
            args = parser.parse_args(argv)
    except InvalidConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (InvalidConfigError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InsufficientDataError, NoThresholdError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except HdqkdError as exc:
        # Failed validation of inputs/geometry/noise: a configuration problem.
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
