"""Task manifests, the strategy x run matrix, JSONL run logs, curves and the arm table."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import statistics
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

from specloop.oracle import Oracle
from specloop.source import GapKind, SourceError
from specloop.strategy import Outcome, StrategyConfig, run_strategy
from specloop.task import SpecTask
from specloop.verifier import Verifier

log = logging.getLogger(__name__)

LOG_FORMAT = 1
STEPS = "candidate_steps"
TOKEN_RATIO = "token_ratio"
RATIO_STEP = Fraction(1, 10)
DEFAULT_MAX_RATIO = 14
CATEGORY = {GapKind.INVARIANT: "invariant", GapKind.CONTRACT: "contract"}


class BenchError(Exception):
    pass


class ManifestError(BenchError):
    pass


class NoData(BenchError):
    pass


class ArmMissing(BenchError):
    pass


class LogError(BenchError):
    pass


def load_manifest(path: Union[str, Path]) -> list[SpecTask]:
    """Read a JSON array of tasks; source paths resolve relative to the manifest."""
    path = Path(path)
    try:
        entries = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ManifestError(f"{path}: {exc}") from None
    if not isinstance(entries, list):
        raise ManifestError(f"{path}: expected a JSON array of tasks")
    return tasks_from_entries(entries, path.parent, str(path))


def tasks_from_entries(entries: list, base: Path, origin: str = "manifest") -> list[SpecTask]:
    """Validate task dicts: unique ids, existing sources, locatable gaps."""
    tasks: list[SpecTask] = []
    seen: set[str] = set()
    for i, entry in enumerate(entries):
        where = f"{origin} entry {i} ({entry.get('id') if isinstance(entry, dict) else entry!r})"
        try:
            task = SpecTask(
                id=str(entry["id"]),
                source_path=(Path(base) / entry["source_path"]).resolve(),
                kind=GapKind(entry["kind"]),
                gap_hint=entry.get("gap_hint"),
                target_method=entry.get("target_method"),
                tags=tuple(entry.get("tags", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"{where}: {type(exc).__name__}: {exc}") from None
        if task.id in seen:
            raise ManifestError(f"{where}: duplicate task id")
        seen.add(task.id)
        if not task.source_path.is_file():
            raise ManifestError(f"{where}: source file {task.source_path} does not exist")
        try:
            task.document
        except (SourceError, ValueError) as exc:
            raise ManifestError(f"{where}: {exc}") from None
        tasks.append(task)
    return tasks


def write_manifest(tasks: Sequence[SpecTask], path: Union[str, Path]) -> None:
    path = Path(path)
    data = [t.to_dict(relative_to=path.parent) for t in tasks]
    path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


def derive_seed(seed: int, task_id: str, run_index: int) -> int:
    """64-bit seed for one (task, run) cell. Independent of the strategy, so arms share draws."""
    digest = hashlib.sha256(f"{seed}:{task_id}:{run_index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


@dataclass
class RunRecord:
    task_id: str
    kind: GapKind
    strategy: str
    run_index: int
    seed: int
    outcome: Outcome
    started_at: str = ""
    finished_at: str = ""

    @property
    def cell(self) -> tuple[str, str, int]:
        return (self.task_id, self.strategy, self.run_index)

    def to_dict(self) -> dict:
        return {
            "type": "record",
            "task_id": self.task_id,
            "kind": self.kind.value,
            "strategy": self.strategy,
            "run_index": self.run_index,
            "seed": self.seed,
            "outcome": self.outcome.to_dict(),
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            d["task_id"], GapKind(d["kind"]), d["strategy"], d["run_index"], d["seed"],
            Outcome.from_dict(d["outcome"]), d.get("started_at", ""), d.get("finished_at", ""),
        )


def load_log(path: Union[str, Path]) -> tuple[dict, list[RunRecord]]:
    header: dict = {}
    records: list[RunRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except ValueError:
                # a crash can leave a torn final line; resume rewrites that cell
                log.warning("%s:%d: skipping unreadable line", path, lineno)
                continue
            if d.get("type") == "header":
                header = d
            elif d.get("type") == "record":
                records.append(RunRecord.from_dict(d))
    return header, records


def _run_cell(task, config, oracle, verifier, run_index, cell_seed, templates) -> RunRecord:
    started = _now()
    try:
        outcome = run_strategy(task, config, oracle, verifier, seed=cell_seed,
                               run_index=run_index, templates=templates)
    except Exception as exc:  # cell isolation: one broken cell never stops the matrix
        log.exception("cell %s/%s/%d failed", task.id, config.spec, run_index)
        outcome = Outcome(config.spec, False, None, [], 0, f"{type(exc).__name__}: {exc}")
    return RunRecord(task.id, task.kind, config.spec, run_index, cell_seed, outcome, started, _now())


def run_matrix(
    tasks: Sequence[SpecTask],
    strategies: Sequence[Union[str, StrategyConfig]],
    runs: int,
    seed: int,
    oracle: Oracle,
    verifier: Verifier,
    log_path: Optional[Union[str, Path]] = None,
    resume: bool = False,
    parallelism: int = 1,
    templates: Optional[Path] = None,
    header: Optional[dict] = None,
    on_record: Optional[Callable[[RunRecord], None]] = None,
) -> list[RunRecord]:
    """Run every (task, strategy, run) cell and stream records to ``log_path``.

    Records are written in cell order whatever the completion order, so a
    rerun with the same seed reproduces the log line for line. With
    ``resume`` the cells already present in the log are skipped.
    """
    if runs < 1:
        raise ValueError("runs must be at least 1")
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    configs = [s if isinstance(s, StrategyConfig) else StrategyConfig.parse(s) for s in strategies]

    done: dict[tuple[str, str, int], RunRecord] = {}
    head = {
        "type": "header",
        "format": LOG_FORMAT,
        "seed": seed,
        "runs": runs,
        "strategies": [c.spec for c in configs],
        "tasks": [t.id for t in tasks],
        **(header or {}),
    }
    fh = None
    if log_path is not None:
        log_path = Path(log_path)
        if resume and log_path.exists():
            old_header, old = load_log(log_path)
            if old_header and old_header.get("seed") != seed:
                raise LogError(f"{log_path} was written with seed {old_header.get('seed')}, not {seed}")
            done = {r.cell: r for r in old}
            _drop_torn_tail(log_path)
            fh = log_path.open("a", encoding="utf-8")
            if not old_header:
                fh.write(json.dumps(head, sort_keys=True) + "\n")
        else:
            log_path.parent.mkdir(parents=True, exist_ok=True)
            fh = log_path.open("w", encoding="utf-8")
            fh.write(json.dumps(head, sort_keys=True) + "\n")
            fh.flush()

    cells = [
        (task, cfg, r)
        for task in tasks
        for cfg in configs
        for r in range(runs)
    ]
    todo = [c for c in cells if (c[0].id, c[1].spec, c[2]) not in done]
    lock = threading.Lock()
    results: dict[int, RunRecord] = {}
    next_to_write = 0

    def emit(i: int, rec: RunRecord) -> None:
        nonlocal next_to_write
        with lock:
            results[i] = rec
            while next_to_write in results:
                ready = results[next_to_write]
                if fh is not None:
                    fh.write(json.dumps(ready.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
                    fh.flush()
                if on_record is not None:
                    on_record(ready)
                next_to_write += 1

    def job(i: int) -> None:
        task, cfg, r = todo[i]
        emit(i, _run_cell(task, cfg, oracle, verifier, r, derive_seed(seed, task.id, r), templates))

    try:
        if parallelism == 1:
            for i in range(len(todo)):
                job(i)
        else:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                list(pool.map(job, range(len(todo))))
    finally:
        if fh is not None:
            fh.close()

    fresh = {results[i].cell: results[i] for i in results}
    return [done.get((t.id, c.spec, r)) or fresh[(t.id, c.spec, r)] for t, c, r in cells]


def _drop_torn_tail(path: Path) -> None:
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        path.write_bytes(data[: data.rfind(b"\n") + 1])


@dataclass(frozen=True)
class CurvePoint:
    x: Union[int, Fraction]
    min: float
    median: float
    max: float


@dataclass(frozen=True)
class Curve:
    strategy: str
    kind: GapKind
    x_axis: str
    points: tuple[CurvePoint, ...]

    def medians(self) -> list[float]:
        return [p.median for p in self.points]

    def at(self, x) -> CurvePoint:
        for p in self.points:
            if p.x == x:
                return p
        raise KeyError(x)


def _runs_for(records: Iterable[RunRecord], strategy: str, kind: GapKind) -> dict[int, list[Outcome]]:
    strategy = StrategyConfig.parse(strategy).spec if isinstance(strategy, str) else strategy.spec
    kind = GapKind(kind)
    runs: dict[int, dict[str, Outcome]] = {}
    for rec in records:
        if rec.strategy == strategy and rec.kind is kind:
            runs.setdefault(rec.run_index, {})[rec.task_id] = rec.outcome
    if not runs:
        raise NoData(f"no records for {strategy} on {kind.value} tasks")
    return {r: list(by_task.values()) for r, by_task in sorted(runs.items())}


def _aggregate(rates_per_run: list[list[float]], xs: Sequence) -> tuple[CurvePoint, ...]:
    points = []
    for j, x in enumerate(xs):
        column = [rates[j] for rates in rates_per_run]
        points.append(CurvePoint(x, min(column), statistics.median(column), max(column)))
    return tuple(points)


def curve_success_vs_steps(records, strategy, kind, max_steps: int) -> Curve:
    """Per run, the fraction of tasks solved within k candidates; min/median/max over runs."""
    runs = _runs_for(records, strategy, kind)
    xs = list(range(1, max_steps + 1))
    rates = []
    for outcomes in runs.values():
        idx = [o.solving_candidate_index for o in outcomes if o.solved]
        rates.append([sum(1 for i in idx if i <= k) / len(outcomes) for k in xs])
    spec = StrategyConfig.parse(strategy).spec if isinstance(strategy, str) else strategy.spec
    return Curve(spec, GapKind(kind), STEPS, _aggregate(rates, xs))


def ratio_grid(max_ratio, step: Fraction = RATIO_STEP) -> list[Fraction]:
    top = Fraction(str(max_ratio))
    n = int(top / step)
    return [step * i for i in range(1, n + 1)]


def curve_success_vs_token_ratio(records, strategy, kind, max_ratio=DEFAULT_MAX_RATIO,
                                 step: Fraction = RATIO_STEP) -> Curve:
    """Per run, the fraction of tasks solved at token ratio <= t, on a uniform grid of t."""
    runs = _runs_for(records, strategy, kind)
    xs = ratio_grid(max_ratio, step)
    rates = []
    for outcomes in runs.values():
        solved = [
            Fraction(o.tokens_at_solution, o.initial_input_tokens)
            for o in outcomes if o.solved and o.initial_input_tokens > 0
        ]
        rates.append([sum(1 for r in solved if r <= t) / len(outcomes) for t in xs])
    spec = StrategyConfig.parse(strategy).spec if isinstance(strategy, str) else strategy.spec
    return Curve(spec, GapKind(kind), TOKEN_RATIO, _aggregate(rates, xs))


@dataclass(frozen=True)
class ArmRow:
    category: str
    arm: str
    solved: int
    total: int
    exclusive_ids: tuple[str, ...]


def report_mixed_vs_sampling(
    records: Sequence[RunRecord], sampling: str = "sampling:50", mixed: str = "mixed:5x10"
) -> list[ArmRow]:
    """Solved counts per category for two arms, pooling runs: a task counts if any run solved it."""
    arms = [StrategyConfig.parse(sampling).spec, StrategyConfig.parse(mixed).spec]
    present = {r.strategy for r in records}
    for arm in arms:
        if arm not in present:
            raise ArmMissing(f"log has no records for arm {arm}")
    rows = []
    for kind in GapKind:
        solved = {arm: set() for arm in arms}
        seen = set()
        for r in records:
            if r.kind is kind and r.strategy in solved:
                seen.add(r.task_id)
                if r.outcome.solved:
                    solved[r.strategy].add(r.task_id)
        if not seen:
            continue
        for arm, other in (arms, arms[::-1]):
            exclusive = tuple(sorted(solved[arm] - solved[other]))
            rows.append(ArmRow(CATEGORY[kind], arm, len(solved[arm]), len(seen), exclusive))
    return rows


def _fmt(v) -> str:
    if isinstance(v, int):
        return str(v)
    return format(float(v), ".10g")


CURVE_COLUMNS = ("strategy", "kind", "x_axis", "x", "min", "median", "max")
TABLE_COLUMNS = ("category", "arm", "solved", "total", "exclusive_ids")


def write_curves_csv(curves: Iterable[Curve], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for c in curves:
            for p in c.points:
                w.writerow([c.strategy, CATEGORY[c.kind], c.x_axis, _fmt(p.x),
                            _fmt(p.min), _fmt(p.median), _fmt(p.max)])


def write_table_csv(rows: Iterable[ArmRow], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for r in rows:
            w.writerow([r.category, r.arm, r.solved, r.total, ";".join(r.exclusive_ids)])


def curves_for_log(records: Sequence[RunRecord], x_axis: str, max_ratio=DEFAULT_MAX_RATIO) -> list[Curve]:
    """Every (strategy, kind) curve the records support, in first-seen strategy order."""
    strategies = list(dict.fromkeys(r.strategy for r in records))
    curves = []
    for spec in strategies:
        budget = StrategyConfig.parse(spec).candidate_budget
        for kind in GapKind:
            if not any(r.strategy == spec and r.kind is kind for r in records):
                continue
            if x_axis == STEPS:
                curves.append(curve_success_vs_steps(records, spec, kind, budget))
            else:
                curves.append(curve_success_vs_token_ratio(records, spec, kind, max_ratio))
    return curves
