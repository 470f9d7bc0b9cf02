"""Command-line driver: ``construct``, ``verify``, ``wave`` and ``export``.

Exit codes: 0 success, 1 failed invariant, 2 unreadable or invalid input,
3 certification abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .algebra import StateError, StateTriple, from_matrix, normalized_det
from .engine import (
    ConstructionState,
    Context,
    DomainSpec,
    EngineConfig,
    EngineError,
    certificate_constant,
    certify_state,
    energy,
    run,
)
from .grid import GridSpec, parse_box, parse_dims
from .io import (
    ConfigError,
    FormatError,
    format_grid_field,
    format_report,
    load_config,
    read_state,
    write_state,
)
from .waves import WaveError, WaveSum, ball_samples, ball_volume, localized_wave, tube_deviation, velocity_mass

log = logging.getLogger("wildeuler")

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_ABORT = 0, 1, 2, 3

CONE_TOL = 1e-8
ORDER_RATIO = 3.5


def _grid_from_flags(state: ConstructionState, dims: str | None, box: str | None) -> GridSpec:
    if dims is None:
        if box is not None:
            raise ValueError("--box needs --grid")
        return dg.auto_grid(state)
    shape = parse_dims(dims)
    if len(shape) != state.domain.dim:
        raise ValueError(f"--grid needs {state.domain.dim} axes")
    if box is None:
        lo, hi = state.domain.bounding_box()
        pad = 0.25 * (hi - lo)
        lo, hi = lo - pad, hi + pad
    else:
        lo, hi = parse_box(box)
        if len(lo) != len(shape):
            raise ValueError("--box and --grid disagree on the number of axes")
    return GridSpec.from_box(lo, hi, shape)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# ------------------------------------------------------------ construct


def _iteration_report(rec, state: ConstructionState, grid: GridSpec | None) -> dict:
    st = rec.state
    r = st.certified[-1]
    C = certificate_constant(st.n)
    # largest alpha for which this step's L1 mass bound holds
    alpha = 2.0 * r.mass / (C * r.gap_integral) if r.gap_integral > 0 else float("nan")
    grid = grid if grid is not None else dg.auto_grid(st)
    rep = dg.diagnose(
        st,
        grid,
        k=rec.k,
        energy=r.energy_after,
        certified=True,
        mollifier_ok=rec.mollifier.ok,
        alpha_measured=alpha,
        extra={
            "eta": rec.eta,
            "frequency": rec.frequency,
            "mollifier_osc": rec.mollifier.osc,
            "mollifier_weak": list(rec.mollifier.weak),
            "balls": r.balls,
            "radius_min": r.radius,
            "amplitude_min": r.amplitude_min,
            "mass": r.mass,
            "energy_before": r.energy_before,
            "samples_certified": r.samples_certified,
            "grid": "x".join(str(s) for s in grid.shape),
        },
    )
    return rep.as_dict()


def cmd_construct(args) -> int:
    try:
        cfg = load_config(args.config)
    except (ConfigError, ValueError, TypeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_PARSE
    engine = cfg.engine
    if args.seed is not None:
        engine = EngineConfig(**{**engine.__dict__, "seed": args.seed})
    out = Path(args.out) if args.out else Path(".")
    state_path = out / cfg.state_file
    try:
        grid = cfg.diagnostic_grid()
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_PARSE

    def on_iteration(rec):
        write_state_path(state_path, rec.state)
        values = _iteration_report(rec, rec.state, grid)
        _write(out / f"{cfg.report_prefix}_{rec.k:03d}.txt", format_report(values))
        log.info("iteration %d: energy %.6g gap %.6g", rec.k, values["energy"], values["gap"])

    write_state_path(state_path, ConstructionState(cfg.domain))
    try:
        run(cfg.domain, engine, on_iteration)
    except EngineError as err:
        if err.state is not None:
            write_state_path(state_path, err.state)
        _write(out / f"{cfg.report_prefix}_abort.txt", format_report({"status": "abort", "reason": str(err)}))
        print(f"certification abort: {err}", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


def write_state_path(path: Path, state: ConstructionState) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    write_state(path, state)


# ------------------------------------------------------------ verify


def verify_state(
    state: ConstructionState, grid: GridSpec, seed: int = 0, require_resolution: bool = True
) -> tuple[dict, list[str]]:
    """Run every invariant; return the report and the names of failed checks.

    With ``require_resolution=False`` an unresolving grid skips the H^-1 check
    (and says so in the report) instead of failing it.
    """
    failed: list[str] = []
    rep: dict = {"terms": len(state.terms), "generations": len(state.generations)}

    worst_det = max((abs(normalized_det(t.ubar)) for t in state.terms), default=0.0)
    worst_kernel = 0.0
    for t in state.terms:
        scale = max(1.0, float(np.abs(t.ubar).max()))
        worst_kernel = max(worst_kernel, float(np.linalg.norm(t.ubar @ t.A[:, 0])) / scale)
    rep["cone_det_max"] = worst_det
    rep["cone_kernel_max"] = worst_kernel
    if worst_det > CONE_TOL or worst_kernel > CONE_TOL:
        failed.append("cone")

    ctx = Context(state.domain, EngineConfig(seed=seed))
    U = state.evaluate(ctx.cert_points)
    sym = float(np.abs(U - np.swapaxes(U, 1, 2)).max()) if len(U) else 0.0
    corner = float(np.abs(U[:, -1, -1]).max()) if len(U) else 0.0
    rep["symmetry_max"] = sym
    rep["corner_max"] = corner
    if sym != 0.0 or corner != 0.0:
        failed.append("symmetry")

    if state.terms:
        r1, r2 = dg.patch_refinement(state)
        ratio = r1 / r2 if r2 > 0 else float("inf")
    else:
        r1 = r2 = 0.0
        ratio = float("inf")
    rep["divergence_h"] = r1
    rep["divergence_h2"] = r2
    rep["divergence_ratio"] = ratio
    # residuals at roundoff level carry no order information
    if r1 > 1e-10 and not ratio >= ORDER_RATIO:
        failed.append("divergence_order")

    cert = certify_state(state, ctx)
    rep["certified_fraction"] = float(cert.mean()) if len(cert) else 1.0
    if not cert.all():
        failed.append("certification")

    e = energy(state, ctx.energy_points)
    vol = state.domain.volume()
    rep["energy"] = e
    rep["gap"] = vol - e
    gains = [r.energy_after for r in state.certified]
    monotone = all(b > a for a, b in zip(gains, gains[1:]))
    if not (np.isfinite(e) and 0.0 <= e <= vol) or not monotone:
        failed.append("energy")

    rep["grid"] = "x".join(str(s) for s in grid.shape)
    try:
        sampled = dg.sample_grid(state, grid)
        rep["support_ok"] = dg.support_check(state, sampled)
        if not rep["support_ok"]:
            failed.append("support")
        rf = dg.residual_force(state, grid, sampled)
        rep["f_hminus1"] = rf.hminus1
        rep["f_l2"] = rf.l2
        if not np.isfinite(rf.hminus1):
            failed.append("hminus1")
    except dg.ResolutionError as err:
        rep["resolution"] = str(err)
        if require_resolution:
            failed.append("resolution")
        else:
            rep["f_hminus1"] = "skipped"

    rep["failed"] = ",".join(failed) if failed else "none"
    rep["status"] = "fail" if failed else "ok"
    return rep, failed


def cmd_verify(args) -> int:
    try:
        state = read_state(args.state)
        grid = _grid_from_flags(state, args.grid, args.box)
    except (FormatError, ValueError) as err:
        print(f"parse error: {err}", file=sys.stderr)
        return EXIT_PARSE
    rep, failed = verify_state(state, grid, seed=args.seed or 0, require_resolution=args.grid is not None)
    text = format_report(rep)
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    if failed:
        print(f"failed invariants: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# ------------------------------------------------------------ wave


def canonical_state(n: int, amplitude: float = 0.5) -> StateTriple:
    """Velocity ``amplitude * e_2`` with ``u = 0, q = 0``: a wave-cone state with kernel ``e_1``."""
    v = np.zeros(n)
    v[1] = amplitude
    return StateTriple(v, np.zeros((n, n)), 0.0)


def _parse_ubar(text: str, n: int) -> StateTriple:
    vals = [float(x) for x in text.split(",")]
    m = n + 1
    if len(vals) != m * m:
        raise ValueError(f"--ubar needs {m * m} comma-separated entries")
    return from_matrix(np.array(vals).reshape(m, m))


def cmd_wave(args) -> int:
    try:
        a = canonical_state(args.n, args.amplitude) if args.ubar is None else _parse_ubar(args.ubar, args.n)
        lw = localized_wave(a, args.eps, n_cap=args.ncap)
    except WaveError as err:
        print(f"wave error: {err} (required N = {err.required_n:g})", file=sys.stderr)
        return EXIT_ABORT
    except (StateError, ValueError) as err:
        print(f"input rejected: {err}", file=sys.stderr)
        return EXIT_PARSE
    m = args.n + 1
    domain = DomainSpec.unit_ball(args.n)
    state = ConstructionState(domain, (lw.waves,))
    seed = args.seed or 0
    inside = ball_samples(m, 4096, seed)
    dirs = ball_samples(m, 1024, seed + 1)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    outside = dirs * (1.0 + 2.0 * np.linspace(0.0, 1.0, len(dirs)))[:, None] + 1e-9 * dirs
    dev = float(tube_deviation(lw.waves, lw.ubar, inside).max())
    mass = velocity_mass(lw.waves, seed=seed)
    vnorm = float(np.linalg.norm(lw.ubar[:-1, -1]))
    rep = {
        "n": args.n,
        "eps": args.eps,
        "frequency": lw.N,
        "terms": len(lw.waves.terms),
        "coverage": lw.coverage,
        "support_zero_outside": bool(np.all(lw.waves.evaluate(outside) == 0.0)),
        "tube_deviation_max": dev,
        "tube_ok": dev <= args.eps,
        "mass": mass,
        "alpha_measured": mass / vnorm,
        "alpha_density": mass / vnorm / ball_volume(m),
    }
    if args.out:
        write_state_path(Path(args.out), state)
    report = format_report(rep)
    if args.report:
        _write(Path(args.report), report)
    else:
        sys.stdout.write(report)
    return EXIT_OK if rep["tube_ok"] and rep["support_zero_outside"] else EXIT_FAIL


# ------------------------------------------------------------ export


FIELDS = ("v", "u", "q", "p", "f")


def export_field(state: ConstructionState, grid: GridSpec, name: str) -> np.ndarray:
    sampled = dg.sample_grid(state, grid)
    if name == "f":
        return dg.force_field(sampled)
    if name == "u":
        return sampled.u.reshape(grid.shape + (-1,))
    return getattr(sampled, name)


def cmd_export(args) -> int:
    try:
        state = read_state(args.state)
        grid = _grid_from_flags(state, args.grid, args.box)
    except (FormatError, ValueError) as err:
        print(f"parse error: {err}", file=sys.stderr)
        return EXIT_PARSE
    k = state.max_wavenumber()
    if not grid.resolves(k, 2.0):
        log.warning("grid spacing is above the Nyquist limit for wavenumber %.4g", k)
    values = export_field(state, grid, args.field)
    text = format_grid_field(state.n, grid, values, args.field)
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wildeuler", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("construct", help="run the construction loop from a JSON config")
    c.add_argument("--config", required=True)
    c.add_argument("--out", help="output directory (default: current)")
    c.add_argument("--seed", type=int)
    c.set_defaults(func=cmd_construct)

    v = sub.add_parser("verify", help="check every invariant of a state file")
    v.add_argument("--state", required=True)
    v.add_argument("--grid", help="diagnostic grid, e.g. 96x96x96 (default: resolving grid)")
    v.add_argument("--box", help="grid box, e.g. --box=-1.5..1.5,-1.5..1.5,-1.5..1.5")
    v.add_argument("--out", help="report path (default: stdout)")
    v.add_argument("--seed", type=int)
    v.set_defaults(func=cmd_verify)

    w = sub.add_parser("wave", help="build one localized wave in the unit ball")
    w.add_argument("--n", type=int, default=2, choices=(2, 3))
    w.add_argument("--ubar", help="row-major (n+1)^2 matrix entries; default: canonical preset")
    w.add_argument("--amplitude", type=float, default=0.5, help="velocity of the canonical preset")
    w.add_argument("--eps", type=float, default=0.1)
    w.add_argument("--ncap", type=float, default=8192.0)
    w.add_argument("--out", help="state file path")
    w.add_argument("--report", help="report path (default: stdout)")
    w.add_argument("--seed", type=int)
    w.set_defaults(func=cmd_wave)

    e = sub.add_parser("export", help="write a field on a grid as comma-separated text")
    e.add_argument("--state", required=True)
    e.add_argument("--field", choices=FIELDS, required=True)
    e.add_argument("--grid")
    e.add_argument("--box", help="grid box, written with = since it starts with a minus sign")
    e.add_argument("--out")
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
