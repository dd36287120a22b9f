"""Command line interface.

Every option can also come from a ``--config`` file of ``key = value`` lines,
where keys are the long option names with dashes replaced by underscores.
Options given on the command line win over the file.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from . import analytic
from .calibrate import CalibrationError, calibrate_schedule
from .experiment import (
    CampaignConfig,
    default_kappa_grid,
    dump_csv,
    run_campaign,
    sweep_inefficiency,
    sweep_kappa,
    write_csv,
)
from .hilbert import QubitState
from .model import Model, OverdampedError, PhysicalParams
from .protocol import ProtocolKind, run_protocol
from .trajectory import DetectorModel, RngStream

COMMANDS = ("times", "analytic", "run", "campaign", "sweep-kappa", "sweep-eta")


def _common(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("physics (frequencies nu = rate / 2pi in MHz)")
    g.add_argument("--delta-mhz", type=float, default=100.0, help="atom-laser detuning")
    g.add_argument("--omega-mhz", type=float, default=10.0, help="laser Rabi frequency")
    g.add_argument("--g-mhz", type=float, default=10.0, help="atom-cavity coupling")
    g.add_argument("--gamma-mhz", type=float, default=0.0, help="excited-state decay")
    g.add_argument("--kappa-t-mhz", type=float, default=0.265, help="mirror transmission loss")
    g.add_argument("--kappa-a-mhz", type=float, default=0.0, help="mirror absorption loss")
    g.add_argument("--decay-to-0", type=float, default=0.5,
                   help="fraction of excited-state decay ending in level 0")
    d = parser.add_argument_group("detectors")
    d.add_argument("--eta", type=float, default=1.0, help="intrinsic detector efficiency")
    d.add_argument("--eta-p", type=float, default=1.0, help="propagation efficiency")
    d.add_argument("--dark-khz", type=float, default=0.0, help="dark-count rate")
    d.add_argument("--dark-total", action="store_true",
                   help="read --dark-khz as the total of both detectors instead of each")
    r = parser.add_argument_group("protocol and sampling")
    r.add_argument("--protocol", choices=[k.value for k in ProtocolKind], default="modified")
    r.add_argument("--model", choices=[m.value for m in Model], default="full")
    r.add_argument("--n-traj", type=int, default=1000)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--m-index", type=int, default=0, help="branch of the first detection time")
    r.add_argument("--t-big-over-kappa", type=float, default=10.0, help="final detection window in 1/kappa")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out", type=Path, default=None, help="CSV output (stdout if omitted)")
    r.add_argument("--log-trajectories", action="store_true",
                   help="also write one row per trajectory to <out>.trajectories.csv")
    r.add_argument("--config", type=Path, default=None, help="key = value file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cavtele", description="Cavity-QED teleportation simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "times": "analytic and calibrated stage times",
        "analytic": "closed-form probabilities and compensation quantities",
        "run": "one verbose trajectory",
        "campaign": "Monte Carlo average at one parameter point",
        "sweep-kappa": "sweep the transmission loss kappa_t",
        "sweep-eta": "sweep the overall detection inefficiency 1 - eta'",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, help=helps[name])
        _common(sp)
        if name == "run":
            sp.add_argument("--theta", type=float, default=math.pi / 2, help="input polar angle")
            sp.add_argument("--phi", type=float, default=0.0, help="input azimuth")
        if name in ("sweep-kappa", "sweep-eta"):
            sp.add_argument("--values", type=str, default=None, help="comma-separated sweep values")
    return parser


def read_config(path: Path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _file_defaults(sub: argparse.ArgumentParser, values: dict[str, str]) -> dict:
    actions = {a.dest: a for a in sub._actions}
    converted = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise ValueError(f"unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            converted[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            value = action.type(raw) if action.type else raw
            if action.choices and value not in action.choices:
                raise ValueError(f"config key {key!r}: {raw!r} not in {list(action.choices)}")
            converted[key] = value
    return converted


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        sp = sub.choices[args.command]
        try:
            sp.set_defaults(**_file_defaults(sp, read_config(args.config)))
        except ValueError as exc:
            parser.error(str(exc))
        args = parser.parse_args(argv)
    return args


def params_from(args) -> PhysicalParams:
    return PhysicalParams.from_mhz(args.delta_mhz, args.omega_mhz, args.g_mhz, args.gamma_mhz,
                                   args.kappa_t_mhz, args.kappa_a_mhz, args.decay_to_0)


def detector_from(args) -> DetectorModel:
    return DetectorModel.from_khz(args.eta, args.eta_p, args.dark_khz, not args.dark_total)


def config_from(args) -> CampaignConfig:
    log = None
    if args.log_trajectories:
        if args.out is None:
            raise ValueError("--log-trajectories needs --out")
        log = args.out.with_suffix(".trajectories.csv")
    return CampaignConfig(
        params_from(args), detector_from(args), ProtocolKind(args.protocol), Model(args.model),
        args.n_traj, args.seed, None, None, log, args.m_index, args.t_big_over_kappa,
        workers=args.workers,
    )


def _values(text: str | None, default) -> tuple[float, ...]:
    if text is None:
        return tuple(default)
    return tuple(float(v) for v in text.split(",") if v.strip())


def cmd_times(args, out) -> None:
    p = params_from(args)
    kind = ProtocolKind(args.protocol)
    t_d = analytic.t_detect_choice(p, args.m_index)
    print("analytic (effective model), us:", file=out)
    print(f"  t_A = {analytic.t_map(p)!r}", file=out)
    print(f"  t_B = {analytic.t_entangle(p)!r}", file=out)
    if kind is ProtocolKind.MODIFIED:
        print(f"  t_d = {t_d!r}", file=out)
        try:
            print(f"  t_c = {analytic.t_compensate(p, t_d)!r}", file=out)
        except analytic.CompensationInfeasibleError as exc:
            print(f"  t_c : infeasible ({exc})", file=out)
    rep = calibrate_schedule(kind, p, Model(args.model), args.m_index, args.t_big_over_kappa)
    s = rep.schedule
    print(f"calibrated ({args.model} model), us:", file=out)
    for name in ("t_A", "t_B", "t_d", "t_c", "t_D"):
        if kind is ProtocolKind.ORIGINAL and name in ("t_d", "t_c"):
            continue
        print(f"  {name} = {getattr(s, name)!r}", file=out)
    print(f"  theta(+1) = {s.theta_plus!r} rad, theta(-1) = {s.theta_minus!r} rad", file=out)
    for flag in rep.flags:
        print(f"  warning: {flag}", file=out)


def cmd_analytic(args, out) -> None:
    p = params_from(args)
    t_d = analytic.t_detect_choice(p, args.m_index)
    rows = [
        ("Omega_kappa (rad/us)", analytic.omega_kappa(p)),
        ("no-click probability, Alice, input |1>", analytic.prob_prep_alice(QubitState(0, 1), p)),
        ("no-click probability, Alice, Haar average",
         0.5 * (1 + math.exp(-p.kappa * analytic.t_map(p)))),
        ("no-click probability, Bob", analytic.prob_prep_bob(p)),
        ("t_d (us)", t_d),
        ("t_c upper bracket (us)", analytic.t_compensate_max(p, t_d)),
        ("maximum compensation factor", analytic.max_compensation_factor(p, t_d)),
    ]
    try:
        t_c = analytic.t_compensate(p, t_d)
        phi, theta = analytic.compensation_functions(t_c, t_d, p)
        rows += [("t_c (us)", t_c), ("phi(t_c)", phi), ("theta(t_c)", theta)]
    except analytic.CompensationInfeasibleError:
        rows.append(("t_c (us)", math.nan))
    try:
        rows.append(("largest feasible t_d (us)", analytic.t_detect_max(p)))
    except analytic.CompensationInfeasibleError:
        rows.append(("largest feasible t_d (us)", math.nan))
    if math.isclose(args.omega_mhz, args.g_mhz):
        rows.append(("kappa/2pi compensation limit (MHz)",
                     analytic.kappa_compensation_limit(args.delta_mhz, args.omega_mhz, args.g_mhz, args.m_index)))
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}}  {v!r}", file=out)


def cmd_run(args, out) -> None:
    p = params_from(args)
    kind = ProtocolKind(args.protocol)
    rep = calibrate_schedule(kind, p, Model(args.model), args.m_index, args.t_big_over_kappa)
    qubit = QubitState.from_bloch(args.theta, args.phi)
    res = run_protocol(kind, qubit, p, rep.schedule, detector_from(args), Model(args.model),
                       RngStream(args.seed), stop_early=False)
    print(f"input: alpha = {qubit.alpha:.6f}, beta = {qubit.beta:.6f}", file=out)
    for stage, record in res.records.items():
        events = ", ".join(f"{e.kind.value}@{e.time:.6f}us" for e in record) or "-"
        print(f"  {stage:<13} {events}", file=out)
    print(f"accepted: {res.accepted} ({res.reject_reason.value})", file=out)
    if res.accepted:
        print(f"detector: {res.epsilon:+d}  fidelity: {res.fidelity!r}", file=out)


def _emit(result, args, out) -> None:
    if args.out is not None:
        write_csv(result, args.out)
    else:
        dump_csv(result, out)
    for pt in result.points:
        label = "" if pt.sweep_value is None else f"{pt.sweep_var.value}={pt.sweep_value!r}: "
        if pt.error:
            print(f"{label}calibration failed: {pt.error}", file=sys.stderr)
        for flag in pt.flags:
            print(f"{label}warning: {flag}", file=sys.stderr)


def cmd_campaign(args, out) -> None:
    _emit(run_campaign(config_from(args)), args, out)


def cmd_sweep_kappa(args, out) -> None:
    result = sweep_kappa(config_from(args), _values(args.values, default_kappa_grid()))
    _emit(result, args, out)
    print(f"plateau edge: kappa_t/2pi = {result.plateau_edge!r} MHz", file=sys.stderr)


def cmd_sweep_eta(args, out) -> None:
    cfg = config_from(args)
    floor = 1.0 - cfg.params.transmission_fraction * cfg.detector.eta
    default = [floor + (1 - floor) * i / 20 for i in range(21)]
    _emit(sweep_inefficiency(cfg, _values(args.values, default)), args, out)


HANDLERS = {
    "times": cmd_times, "analytic": cmd_analytic, "run": cmd_run, "campaign": cmd_campaign,
    "sweep-kappa": cmd_sweep_kappa, "sweep-eta": cmd_sweep_eta,
}


def main(argv=None, out=None) -> int:
    args = parse_args(argv)
    out = out or sys.stdout
    try:
        HANDLERS[args.command](args, out)
    except (ValueError, OverdampedError, CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
