"""Monte Carlo campaigns: random inputs, parameter sweeps, aggregation, CSV output.

Every trajectory ``i`` of a sweep point draws all of its randomness from
``RngStream(base_seed, i)``: substream 0 for jumps, 1 for dark counts and 2
for the input qubit. Results therefore do not depend on how trajectories are
spread over worker processes. All sweep points share the same streams
(common random numbers), which keeps trends across a sweep smooth.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .analytic import CompensationInfeasibleError
from .calibrate import CalibrationError, calibrate_schedule
from .hilbert import QubitState
from .model import TWO_PI, Model, OverdampedError, PhysicalParams
from .protocol import PrepSync, ProtocolKind, StageSchedule, run_protocol
from .trajectory import DetectorModel, RngStream

INPUT_SUBSTREAM = 2
INPUT_MEASURE = "haar"

CSV_HEADER = (
    "sweep_var", "sweep_value", "protocol", "model", "n_traj", "n_accepted",
    "success_prob", "avg_fidelity", "stderr_fidelity", "stderr_success",
    "t_A_us", "t_B_us", "t_d_us", "t_c_us", "t_D_us", "seed",
)
LOG_HEADER = ("sweep_value", "index", "accepted", "epsilon", "fidelity", "alpha_re", "alpha_im",
              "beta_re", "beta_im", "reject_reason")


class SweepVar(Enum):
    NONE = "none"
    KAPPA_T = "kappa_t"  # values: kappa_t / 2pi in MHz
    INEFFICIENCY = "overall_inefficiency"  # values: 1 - eta'


@dataclass(frozen=True)
class Sweep:
    variable: SweepVar
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise ValueError("a sweep needs at least one value")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("sweep values must be finite")
        if self.variable is SweepVar.KAPPA_T and min(self.values) < 0:
            raise ValueError("kappa_t values must be non-negative")
        if self.variable is SweepVar.INEFFICIENCY and not all(0.0 <= v <= 1.0 for v in self.values):
            raise ValueError("overall inefficiency values must lie in [0, 1]")


@dataclass(frozen=True)
class CampaignConfig:
    params: PhysicalParams
    detector: DetectorModel = DetectorModel()
    protocol: ProtocolKind = ProtocolKind.MODIFIED
    model: Model = Model.FULL
    n_traj: int = 1000
    base_seed: int = 0
    sweep: Sweep | None = None
    output: Path | None = None
    log_path: Path | None = None
    m_index: int = 0
    t_big_over_kappa: float = 10.0
    n_max: int = 2
    sync: PrepSync = PrepSync.CO_TERMINATE
    workers: int = 1

    def __post_init__(self):
        if self.n_traj < 1:
            raise ValueError("n_traj must be at least 1")
        if not 0 <= self.base_seed < 2**64:
            raise ValueError("base_seed must be a 64-bit unsigned integer")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.t_big_over_kappa <= 0:
            raise ValueError("t_big_over_kappa must be positive")


@dataclass
class PointSummary:
    sweep_var: SweepVar
    sweep_value: float | None
    protocol: ProtocolKind
    model: Model
    n_traj: int
    n_accepted: int
    success_prob: float
    avg_fidelity: float
    stderr_fidelity: float
    stderr_success: float
    schedule: StageSchedule | None
    seed: int
    flags: list[str] = field(default_factory=list)
    error: str | None = None

    def csv_row(self) -> list[str]:
        s = self.schedule
        times = (s.t_A, s.t_B, s.t_d, s.t_c, s.t_D) if s else (math.nan,) * 5
        value = "" if self.sweep_value is None else repr(self.sweep_value)
        return [
            self.sweep_var.value, value, self.protocol.value, self.model.value,
            str(self.n_traj), str(self.n_accepted),
            *(repr(float(x)) for x in (self.success_prob, self.avg_fidelity,
                                       self.stderr_fidelity, self.stderr_success, *times)),
            str(self.seed),
        ]


@dataclass
class CampaignSummary:
    points: list[PointSummary]
    input_measure: str = INPUT_MEASURE
    plateau_edge: float | None = None

    def values(self, attr: str) -> np.ndarray:
        return np.array([getattr(pt, attr) for pt in self.points], dtype=float)


@dataclass(frozen=True)
class TrajectoryResult:
    index: int
    accepted: bool
    epsilon: int | None
    fidelity: float | None
    qubit: QubitState
    reject_reason: str


def sample_input_state(rng: np.random.Generator) -> QubitState:
    """Haar-random qubit: cos(theta) uniform on [-1, 1], phi uniform on [0, 2 pi)."""
    theta = math.acos(1.0 - 2.0 * rng.random())
    phi = TWO_PI * rng.random()
    return QubitState.from_bloch(theta, phi)


def run_trajectory(index: int, cfg: CampaignConfig, p: PhysicalParams, sched: StageSchedule,
                   det: DetectorModel) -> TrajectoryResult:
    stream = RngStream(cfg.base_seed, index)
    qubit = sample_input_state(stream.generator(INPUT_SUBSTREAM))
    out = run_protocol(cfg.protocol, qubit, p, sched, det, cfg.model, stream, cfg.n_max, cfg.sync)
    return TrajectoryResult(index, out.accepted, out.epsilon, out.fidelity, qubit, out.reject_reason.value)


def _run_chunk(args) -> list[TrajectoryResult]:
    lo, hi, cfg, p, sched, det = args
    return [run_trajectory(i, cfg, p, sched, det) for i in range(lo, hi)]


def run_trajectories(cfg: CampaignConfig, p: PhysicalParams, sched: StageSchedule,
                     det: DetectorModel, pool: ProcessPoolExecutor | None = None) -> list[TrajectoryResult]:
    """All ``cfg.n_traj`` trajectories of one sweep point, ordered by index."""
    if pool is None:
        return _run_chunk((0, cfg.n_traj, cfg, p, sched, det))
    n_chunks = min(cfg.n_traj, 8 * cfg.workers)
    edges = np.linspace(0, cfg.n_traj, n_chunks + 1).astype(int)
    jobs = [(int(a), int(b), cfg, p, sched, det) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    results = []
    for chunk in pool.map(_run_chunk, jobs):
        results.extend(chunk)
    return results


def _stderr(xs: list[float], mean: float) -> float:
    n = len(xs)
    if n < 2:
        return 0.0
    var = math.fsum((x - mean) ** 2 for x in xs) / (n - 1)
    return math.sqrt(var / n)


def aggregate(accepted: list[bool], fidelities: list[float]) -> tuple[int, float, float, float, float]:
    """(n_accepted, success, avg fidelity, stderr fidelity, stderr success).

    Sums are exactly rounded (``math.fsum``), so the result does not depend on
    the order in which trajectories finished.
    """
    n = len(accepted)
    k = sum(bool(a) for a in accepted)
    success = k / n
    hits = [1.0 if a else 0.0 for a in accepted]
    avg = math.fsum(fidelities) / len(fidelities) if fidelities else math.nan
    return k, success, avg, _stderr(fidelities, avg) if fidelities else math.nan, _stderr(hits, success)


def point_inputs(cfg: CampaignConfig, value: float | None) -> tuple[PhysicalParams, DetectorModel]:
    """Physical parameters and detector model at one sweep point."""
    p, det = cfg.params, cfg.detector
    if cfg.sweep is None or value is None:
        return p, det
    if cfg.sweep.variable is SweepVar.KAPPA_T:
        return p.with_kappa_t(TWO_PI * value), det
    eta_prime = 1.0 - value
    eta_a = p.transmission_fraction
    if eta_a * det.eta == 0:
        raise ValueError("no photon can reach the detectors; overall efficiency is fixed at 0")
    eta_p = eta_prime / (eta_a * det.eta)
    if eta_p > 1.0 + 1e-12:
        raise ValueError(
            f"overall efficiency {eta_prime:.6g} exceeds eta_a * eta = {eta_a * det.eta:.6g}"
        )
    return p, replace(det, eta_p=min(eta_p, 1.0))


def run_point(cfg: CampaignConfig, value: float | None = None,
              pool: ProcessPoolExecutor | None = None) -> tuple[PointSummary, list[TrajectoryResult]]:
    var = cfg.sweep.variable if cfg.sweep else SweepVar.NONE
    nan = math.nan

    def failed(msg: str) -> PointSummary:
        return PointSummary(var, value, cfg.protocol, cfg.model, cfg.n_traj, 0, nan, nan, nan, nan,
                            None, cfg.base_seed, error=msg)

    try:
        p, det = point_inputs(cfg, value)
        report = calibrate_schedule(cfg.protocol, p, cfg.model, cfg.m_index, cfg.t_big_over_kappa,
                                    cfg.n_max, cfg.sync)
    except (CalibrationError, CompensationInfeasibleError, OverdampedError) as exc:
        return failed(f"{type(exc).__name__}: {exc}"), []
    trajs = run_trajectories(cfg, p, report.schedule, det, pool)
    k, success, avg, se_f, se_p = aggregate(
        [t.accepted for t in trajs], [t.fidelity for t in trajs if t.accepted]
    )
    summary = PointSummary(var, value, cfg.protocol, cfg.model, cfg.n_traj, k, success, avg, se_f, se_p,
                           report.schedule, cfg.base_seed, list(report.flags))
    return summary, trajs


def plateau_edge(values, fidelities, n_ref: int = 3, band: float = 0.01) -> float | None:
    """Largest sweep value up to which every fidelity stays within ``band`` of the
    mean over the ``n_ref`` lowest values; failed points (NaN) end the plateau."""
    order = np.argsort(values)
    xs = np.asarray(values, dtype=float)[order]
    fs = np.asarray(fidelities, dtype=float)[order]
    ref = fs[:n_ref]
    if len(ref) == 0 or not np.all(np.isfinite(ref)):
        return None
    mean = math.fsum(ref) / len(ref)
    edge = None
    for x, f in zip(xs, fs):
        if not (math.isfinite(f) and abs(f - mean) <= band):
            break
        edge = float(x)
    return edge


def run_campaign(cfg: CampaignConfig) -> CampaignSummary:
    """Calibrate and simulate every sweep point; write the CSV (and log) if requested.

    A calibration failure at one point is recorded in that point's ``error``
    and the sweep continues.
    """
    values = cfg.sweep.values if cfg.sweep else (None,)
    points, logs = [], []
    pool = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for value in values:
            summary, trajs = run_point(cfg, value, pool)
            points.append(summary)
            if cfg.log_path is not None:
                logs.append((value, trajs))
    finally:
        if pool is not None:
            pool.shutdown()
    result = CampaignSummary(points)
    if cfg.output is not None:
        write_csv(result, cfg.output)
    if cfg.log_path is not None:
        write_log(logs, cfg.log_path)
    return result


def sweep_kappa(cfg: CampaignConfig, values_mhz) -> CampaignSummary:
    """Sweep kappa_t / 2pi (MHz) and annotate the fidelity plateau edge."""
    result = run_campaign(replace(cfg, sweep=Sweep(SweepVar.KAPPA_T, tuple(values_mhz))))
    result.plateau_edge = plateau_edge(result.values("sweep_value"), result.values("avg_fidelity"))
    return result


def sweep_inefficiency(cfg: CampaignConfig, values) -> CampaignSummary:
    """Sweep the overall inefficiency 1 - eta'.

    eta' = eta_a * eta_p * eta with eta_a = kappa'/kappa and the intrinsic
    eta fixed; the sweep sets eta_p = eta' / (eta_a * eta).
    """
    sweep = Sweep(SweepVar.INEFFICIENCY, tuple(values))
    for v in sweep.values:
        point_inputs(replace(cfg, sweep=sweep), v)  # reject unreachable points up front
    return run_campaign(replace(cfg, sweep=sweep))


def default_kappa_grid() -> tuple[float, ...]:
    """kappa_t / 2pi from 0.02 to 0.35 MHz in 0.01 MHz steps."""
    return tuple(round(0.02 + 0.01 * i, 10) for i in range(34))


def write_csv(result: CampaignSummary, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        dump_csv(result, fh)


def dump_csv(result: CampaignSummary, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for pt in result.points:
        w.writerow(pt.csv_row())


def read_csv(path) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_log(logs, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_HEADER)
        for value, trajs in logs:
            for t in trajs:
                a, b = t.qubit.alpha, t.qubit.beta
                w.writerow([
                    "" if value is None else repr(value), t.index, int(t.accepted),
                    "" if t.epsilon is None else t.epsilon,
                    "" if t.fidelity is None else repr(float(t.fidelity)),
                    *(repr(float(x)) for x in (a.real, a.imag, b.real, b.imag)), t.reject_reason,
                ])


def summary_from_log(path) -> dict[str, tuple[int, float, float, float, float]]:
    """Recompute ``aggregate`` per sweep value from a trajectory log."""
    groups: dict[str, tuple[list[bool], list[float]]] = {}
    for row in read_csv(path):
        acc, fids = groups.setdefault(row["sweep_value"], ([], []))
        acc.append(row["accepted"] == "1")
        if row["accepted"] == "1":
            fids.append(float(row["fidelity"]))
    return {k: aggregate(*v) for k, v in groups.items()}
