"""Experiment drivers: chain-walk penalty study and lava-gridworld sweeps.

Sweeps fan (setting, seed) jobs out to a process pool and reduce the
per-seed metrics in a fixed order, so the output is the same whatever the
pool size.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import analysis
from .envs import DEFAULT_LAYOUT, GridSpec, build_chain_walk, build_gridworld
from .learner import (
    LearnerConfig,
    behaviour_failure_rate,
    converged_failure_rate,
    mean_return,
    run_fixed_penalty,
    run_training,
)

ADAPTIVE = "adaptive"
METRIC_WINDOW = 1000

PENALTY_COLUMNS = ["penalty", "failure_rate", "failure_stderr", "mean_return", "steps_to_convergence"]
SLIP_COLUMNS = ["slip", "failure_rate", "failure_stderr", "mean_return", "final_penalty"]
RAW_COLUMNS = [
    "setting",
    "seed",
    "failure_rate",
    "behaviour_failure_rate",
    "mean_return",
    "steps_to_convergence",
    "convergence_episode",
    "final_penalty",
    "penalty_monotone",
]
EPISODE_COLUMNS = ["episode", "return", "steps", "terminal", "penalty"]
CHAINWALK_COLUMNS = ["p", "label", "penalty", "failure_prob", "sweeps", "C", "D", "minmax_penalty"]


def worker_count() -> int:
    env = os.environ.get("MINMAX_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# --- chain walk -----------------------------------------------------------------


def chainwalk_penalty_study(p_values, penalties=()) -> list[dict]:
    """Failure probability of the value-iteration optimum for each (p, penalty).

    Besides the requested penalties, each p gets the three reference choices:
    the inverse-controllability penalty, the diameter-only penalty and the
    Minmax penalty (exact and nudged down by 1e-10).
    """
    rows = []
    for p in p_values:
        mdp = build_chain_walk(p)
        sa = analysis.minmax_penalty(mdp)
        r_min, r_max, C, D = sa.r_min, sa.r_max, sa.controllability, sa.diameter
        choices = [("custom", float(u)) for u in penalties]
        choices += [
            ("inverse-C", min(r_min, (r_min - r_max) / C)),
            ("diameter", min(r_min, (r_min - r_max) * D)),
            ("minmax", sa.minmax_penalty),
            ("minmax-eps", sa.minmax_penalty - 1e-10),
        ]
        for label, u in choices:
            vi = analysis.value_iteration(mdp, u)
            rows.append(
                {
                    "p": p,
                    "label": label,
                    "penalty": u,
                    "failure_prob": analysis.failure_probability(mdp, vi.policy),
                    "sweeps": vi.sweeps,
                    "C": C,
                    "D": D,
                    "minmax_penalty": sa.minmax_penalty,
                }
            )
    return rows


# --- gridworld sweeps ---------------------------------------------------------------


@dataclass(frozen=True)
class RunMetrics:
    setting: float | str
    seed: int
    failure_rate: float
    behaviour_failure_rate: float
    mean_return: float
    steps_to_convergence: int
    convergence_episode: int | None
    final_penalty: float
    penalty_monotone: bool = True


@dataclass(frozen=True)
class SweepRow:
    setting: float | str
    n_seeds: int
    failure_rate: float
    failure_stderr: float
    mean_return: float
    steps_to_convergence: float
    final_penalty: float


@dataclass
class SweepResult:
    variable: str
    rows: list[SweepRow]
    seeds: list[int]
    raw: list[RunMetrics] = field(default_factory=list)
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class _Job:
    kind: str
    setting: float | str
    seed: int
    layout: tuple[str, ...]
    slip: float
    cfg: LearnerConfig


def _run_job(job: _Job) -> RunMetrics:
    slip = job.setting if job.kind == "slip" else job.slip
    world = build_gridworld(GridSpec(job.layout, slip_prob=slip))
    cfg = replace(job.cfg, seed=job.seed)
    if job.setting == ADAPTIVE or job.kind == "slip":
        res = run_training(world.mdp, cfg)
    else:
        res = run_fixed_penalty(world.mdp, float(job.setting), cfg)
    return RunMetrics(
        setting=job.setting,
        seed=job.seed,
        failure_rate=converged_failure_rate(world.mdp, res, METRIC_WINDOW),
        behaviour_failure_rate=behaviour_failure_rate(res.logs, METRIC_WINDOW),
        mean_return=mean_return(res.logs, METRIC_WINDOW),
        steps_to_convergence=res.steps_to_convergence,
        convergence_episode=res.convergence_episode,
        final_penalty=res.final_penalty,
        penalty_monotone=penalty_monotone(res.logs),
    )


def penalty_monotone(logs) -> bool:
    pen = [log.penalty for log in logs]
    return all(b <= a for a, b in zip(pen, pen[1:]))


def _stderr(x: np.ndarray) -> float:
    if len(x) < 2:
        return math.nan
    return float(np.std(x, ddof=1) / math.sqrt(len(x)))


def aggregate(raw: list[RunMetrics], settings: list) -> list[SweepRow]:
    rows = []
    for setting in settings:
        runs = [m for m in raw if m.setting == setting]
        fr = np.array([m.failure_rate for m in runs])
        rows.append(
            SweepRow(
                setting=setting,
                n_seeds=len(runs),
                failure_rate=float(fr.mean()),
                failure_stderr=_stderr(fr),
                mean_return=float(np.mean([m.mean_return for m in runs])),
                steps_to_convergence=float(np.mean([m.steps_to_convergence for m in runs])),
                final_penalty=float(np.mean([m.final_penalty for m in runs])),
            )
        )
    return rows


def seed_list(base_seed: int, n: int) -> list[int]:
    return [base_seed + i for i in range(n)]


def grid_sweep(
    kind: str,
    settings,
    seeds: int = 70,
    base_seed: int = 0,
    layout=DEFAULT_LAYOUT,
    slip: float = 0.25,
    cfg: LearnerConfig = LearnerConfig(),
    workers: int | None = None,
) -> SweepResult:
    """Penalty sweep (fixed penalties plus one adaptive arm) or slip sweep (adaptive only)."""
    if kind not in ("penalty", "slip"):
        raise ValueError(f"unknown sweep kind {kind!r}")
    if seeds < 1:
        raise ValueError("need at least one seed")
    layout = GridSpec(layout).layout
    settings = [float(x) for x in settings]
    if kind == "penalty":
        settings = settings + [ADAPTIVE]
    seed_ids = seed_list(base_seed, seeds)
    jobs = [_Job(kind, st, sd, layout, slip, cfg) for st in settings for sd in seed_ids]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        raw = [_run_job(j) for j in jobs]
    meta = {
        "kind": kind,
        "seeds": seed_ids,
        "base_seed": base_seed,
        "slip": slip if kind == "penalty" else None,
        "layout": list(layout),
        "config": asdict(cfg),
        "metric_window": METRIC_WINDOW,
    }
    return SweepResult("penalty" if kind == "penalty" else "slip", aggregate(raw, settings), seed_ids, raw, meta)


# --- emit / read ----------------------------------------------------------------------


def sweep_table(result: SweepResult) -> tuple[list[str], list[list]]:
    if result.variable == "penalty":
        cols = PENALTY_COLUMNS
        body = [[r.setting, r.failure_rate, r.failure_stderr, r.mean_return, r.steps_to_convergence] for r in result.rows]
    else:
        cols = SLIP_COLUMNS
        body = [[r.setting, r.failure_rate, r.failure_stderr, r.mean_return, r.final_penalty] for r in result.rows]
    return cols, body


def raw_table(result: SweepResult) -> tuple[list[str], list[list]]:
    return RAW_COLUMNS, [[getattr(m, c) for c in RAW_COLUMNS] for m in result.raw]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path: str | Path, columns: list[str], rows: list[list]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_cell(v) for v in row])
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror or e}") from e
    return path


def read_csv(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_episode_log(path: str | Path, logs) -> Path:
    return write_csv(path, EPISODE_COLUMNS, [[lg.episode, lg.ret, lg.steps, lg.terminal, lg.penalty] for lg in logs])


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def sweep_to_dict(result: SweepResult) -> dict:
    return {
        "variable": result.variable,
        "seeds": result.seeds,
        "meta": result.meta,
        "rows": [{k: _jsonable(v) for k, v in asdict(r).items()} for r in result.rows],
        "raw": [{k: _jsonable(v) for k, v in asdict(m).items()} for m in result.raw],
    }


def write_json(path: str | Path, doc: dict) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror or e}") from e
    return path


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def sweep_from_dict(doc: dict) -> SweepResult:
    def num(v):
        return math.nan if v is None else v

    rows = [SweepRow(**{k: num(v) for k, v in r.items()}) for r in doc["rows"]]
    raw = [RunMetrics(**{k: (v if k == "convergence_episode" else num(v)) for k, v in m.items()}) for m in doc["raw"]]
    return SweepResult(doc["variable"], rows, doc["seeds"], raw, doc.get("meta", {}))


def emit_sweep(result: SweepResult, out_dir: str | Path, fmt: str = "csv") -> list[Path]:
    """Write the wide table and the raw per-seed table (csv) or one JSON document."""
    out_dir = Path(out_dir)
    stem = f"sweep_{result.variable}"
    if fmt == "csv":
        cols, body = sweep_table(result)
        rcols, rbody = raw_table(result)
        return [write_csv(out_dir / f"{stem}.csv", cols, body), write_csv(out_dir / f"{stem}_raw.csv", rcols, rbody)]
    if fmt == "json":
        return [write_json(out_dir / f"{stem}.json", sweep_to_dict(result))]
    raise ValueError(f"unknown format {fmt!r}")
