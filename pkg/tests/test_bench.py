import csv
import json
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from conftest import CALLEE, REVERSE, fake_outcome
from specloop.bench import (
    STEPS, TOKEN_RATIO, ArmMissing, LogError, ManifestError, NoData, RunRecord,
    curve_success_vs_steps, curve_success_vs_token_ratio, curves_for_log, derive_seed, load_log,
    load_manifest, ratio_grid, report_mixed_vs_sampling, run_matrix, write_curves_csv,
    write_manifest, write_table_csv,
)
from specloop.oracle import StochasticOracle, load_profiles
from specloop.source import GapKind
from specloop.synthetic import make_synthetic_suite
from specloop.verifier import MockVerifier


def record(task_id, strategy, run, solved_at, budget, kind=GapKind.CONTRACT, **kw):
    return RunRecord(task_id, kind, strategy, run, 0, fake_outcome(strategy, solved_at, budget, **kw))


@pytest.fixture(scope="module")
def suite(tmp_path_factory):
    paths = make_synthetic_suite(tmp_path_factory.mktemp("suite"), n_tasks=6, seed=3)
    return {
        "tasks": load_manifest(paths["manifest"]),
        "oracle": StochasticOracle(load_profiles(paths["profiles"])),
        "verifier": MockVerifier.load(paths["rules"]),
    }


class TestManifest:
    def test_mixed_categories(self, tmp_path):
        (tmp_path / "L.java").write_text(CALLEE)
        (tmp_path / "R.java").write_text(REVERSE)
        entries = [{"id": f"inv{i}", "source_path": "R.java", "kind": "invariant"} for i in range(27)]
        entries += [{"id": f"con{i}", "source_path": "L.java", "kind": "contract", "gap_hint": "g"}
                    for i in range(14)]
        (tmp_path / "m.json").write_text(json.dumps(entries))
        tasks = load_manifest(tmp_path / "m.json")
        assert len(tasks) == 41
        assert sum(t.kind is GapKind.INVARIANT for t in tasks) == 27
        assert tasks[-1].target == "f"

    def test_empty(self, tmp_path):
        (tmp_path / "m.json").write_text("[]")
        assert load_manifest(tmp_path / "m.json") == []

    def test_duplicate_id(self, tmp_path):
        (tmp_path / "R.java").write_text(REVERSE)
        entry = {"id": "a", "source_path": "R.java", "kind": "invariant"}
        (tmp_path / "m.json").write_text(json.dumps([entry, entry]))
        with pytest.raises(ManifestError, match="duplicate"):
            load_manifest(tmp_path / "m.json")

    def test_missing_file(self, tmp_path):
        (tmp_path / "m.json").write_text(json.dumps([{"id": "a", "source_path": "nope.java", "kind": "invariant"}]))
        with pytest.raises(ManifestError, match="does not exist"):
            load_manifest(tmp_path / "m.json")

    def test_gap_not_found(self, tmp_path):
        (tmp_path / "L.java").write_text(CALLEE)
        (tmp_path / "m.json").write_text(json.dumps([{"id": "a", "source_path": "L.java", "kind": "invariant"}]))
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "m.json")

    def test_roundtrip(self, suite, tmp_path):
        write_manifest(suite["tasks"], tmp_path / "copy.json")
        again = load_manifest(tmp_path / "copy.json")
        assert [(t.id, t.kind, t.gap_hint, t.target) for t in again] == \
               [(t.id, t.kind, t.gap_hint, t.target) for t in suite["tasks"]]


def test_derive_seed_ignores_strategy():
    assert derive_seed(1, "t", 0) == derive_seed(1, "t", 0)
    assert len({derive_seed(1, "t", r) for r in range(50)}) == 50
    assert derive_seed(1, "t", 0) != derive_seed(2, "t", 0)


class TestMatrix:
    def run(self, suite, tasks, log=None, **kw):
        return run_matrix(tasks, ["sampling:3", "feedback:3"], 5, 11, suite["oracle"], suite["verifier"],
                          log_path=log, **kw)

    def test_cardinality(self, suite, tmp_path):
        recs = self.run(suite, suite["tasks"][:2], tmp_path / "log.jsonl")
        assert len(recs) == 2 * 2 * 5
        header, logged = load_log(tmp_path / "log.jsonl")
        assert header["seed"] == 11 and header["runs"] == 5
        assert [r.cell for r in logged] == [r.cell for r in recs]

    def test_deterministic_and_parallel_safe(self, suite, tmp_path):
        a = self.run(suite, suite["tasks"], tmp_path / "a.jsonl")
        b = self.run(suite, suite["tasks"], tmp_path / "b.jsonl", parallelism=4)
        assert [r.outcome for r in a] == [r.outcome for r in b]
        strip = lambda p: [{k: v for k, v in json.loads(l).items() if not k.endswith("_at")}
                           for l in p.read_text().splitlines()]
        assert strip(tmp_path / "a.jsonl") == strip(tmp_path / "b.jsonl")

    def test_resume_runs_missing_only(self, suite, tmp_path):
        log = tmp_path / "log.jsonl"
        full = self.run(suite, suite["tasks"][:2], log)
        lines = log.read_text().splitlines(keepends=True)
        # keep header + 7 records and a torn eighth line
        log.write_text("".join(lines[:8]) + lines[8][:20])
        fresh = []
        resumed = self.run(suite, suite["tasks"][:2], log, resume=True, on_record=fresh.append)
        assert len(fresh) == 20 - 7
        assert [r.outcome for r in resumed] == [r.outcome for r in full]
        _, logged = load_log(log)
        assert len(logged) == 20 and len({r.cell for r in logged}) == 20

    def test_resume_seed_mismatch(self, suite, tmp_path):
        log = tmp_path / "log.jsonl"
        self.run(suite, suite["tasks"][:1], log)
        with pytest.raises(LogError):
            run_matrix(suite["tasks"][:1], ["sampling:3"], 5, 12, suite["oracle"], suite["verifier"],
                       log_path=log, resume=True)

    def test_failing_cell_recorded(self, suite):
        class Broken:
            def verify(self, *a):
                raise RuntimeError("boom")
        recs = run_matrix(suite["tasks"][:1], ["sampling:2"], 1, 0, suite["oracle"], Broken())
        assert not recs[0].outcome.solved and "boom" in recs[0].outcome.cause


class TestCurves:
    def test_steps_fixture(self):
        recs = [record("a", "feedback:3", 0, 2, 3), record("b", "feedback:3", 0, None, 3)]
        curve = curve_success_vs_steps(recs, "feedback:3", GapKind.CONTRACT, 3)
        assert curve.medians() == [0.0, 0.5, 0.5]

    def test_min_median_max_over_runs(self):
        recs = [record("a", "sampling:3", r, s, 3) for r, s in enumerate([1, 2, None])]
        p = curve_success_vs_steps(recs, "sampling:3", GapKind.CONTRACT, 3).at(1)
        assert (p.min, p.median, p.max) == (0.0, 0.0, 1.0)

    def test_no_data(self):
        with pytest.raises(NoData):
            curve_success_vs_steps([record("a", "feedback:3", 0, 1, 3)], "sampling:3", GapKind.CONTRACT, 3)
        with pytest.raises(NoData):
            curve_success_vs_steps([record("a", "feedback:3", 0, 1, 3)], "feedback:3", GapKind.INVARIANT, 3)

    def test_ratio_thresholds_exact(self):
        # feedback solved at 1 step: ratio exactly 1.2; sampling at 5: exactly 6.0
        recs = [record("a", "feedback:10", 0, 1, 10), record("a", "sampling:10", 0, 5, 10)]
        fb = curve_success_vs_token_ratio(recs, "feedback:10", GapKind.CONTRACT)
        sm = curve_success_vs_token_ratio(recs, "sampling:10", GapKind.CONTRACT)
        assert fb.at(Fraction(11, 10)).median == 0.0 and fb.at(Fraction(6, 5)).median == 1.0
        assert sm.at(Fraction(59, 10)).median == 0.0 and sm.at(Fraction(6)).median == 1.0

    def test_ratio_grid(self):
        grid = ratio_grid(14)
        assert grid[0] == Fraction(1, 10) and grid[-1] == 14 and len(grid) == 140

    def test_curves_for_log(self):
        recs = [record("a", "feedback:3", 0, 1, 3), record("b", "sampling:2", 0, None, 2, kind=GapKind.INVARIANT)]
        steps = curves_for_log(recs, STEPS)
        assert [(c.strategy, c.kind, len(c.points)) for c in steps] == \
               [("feedback:3", GapKind.CONTRACT, 3), ("sampling:2", GapKind.INVARIANT, 2)]
        assert all(c.x_axis == TOKEN_RATIO for c in curves_for_log(recs, TOKEN_RATIO, 2))


_outcomes = st.lists(st.lists(st.one_of(st.none(), st.integers(1, 8)), min_size=1, max_size=6),
                     min_size=1, max_size=5)


@given(_outcomes)
def test_curves_monotone_and_ordered(runs):
    recs = [record(f"t{j}", "feedback:8", r, s, 8) for r, tasks in enumerate(runs) for j, s in enumerate(tasks)]
    for curve in (curve_success_vs_steps(recs, "feedback:8", GapKind.CONTRACT, 8),
                  curve_success_vs_token_ratio(recs, "feedback:8", GapKind.CONTRACT, 20, Fraction(1, 2))):
        for p in curve.points:
            assert 0 <= p.min <= p.median <= p.max <= 1
        for a, b in zip(curve.points, curve.points[1:]):
            assert a.min <= b.min and a.median <= b.median and a.max <= b.max


class TestTable:
    def recs(self):
        out = []
        for r in range(2):
            out.append(record("c1", "sampling:50", r, 3 if r == 0 else None, 50))
            out.append(record("c1", "mixed:5x10", r, 7, 50))
            out.append(record("c2", "sampling:50", r, None, 50))
            out.append(record("c2", "mixed:5x10", r, 9 if r == 1 else None, 50))
            out.append(record("i1", "sampling:50", r, None, 50, kind=GapKind.INVARIANT))
            out.append(record("i1", "mixed:5x10", r, None, 50, kind=GapKind.INVARIANT))
        return out

    def test_rows(self):
        rows = {(r.category, r.arm): r for r in report_mixed_vs_sampling(self.recs())}
        assert rows[("contract", "sampling:50")].solved == 1
        assert rows[("contract", "mixed:5x10")].solved == 2
        assert rows[("contract", "mixed:5x10")].exclusive_ids == ("c2",)
        assert rows[("contract", "sampling:50")].exclusive_ids == ()
        assert rows[("invariant", "mixed:5x10")].total == 1

    def test_arm_missing(self):
        with pytest.raises(ArmMissing):
            report_mixed_vs_sampling([r for r in self.recs() if r.strategy == "sampling:50"])

    def test_csv(self, tmp_path):
        write_table_csv(report_mixed_vs_sampling(self.recs()), tmp_path / "t.csv")
        rows = list(csv.DictReader((tmp_path / "t.csv").open()))
        assert rows[0].keys() == {"category", "arm", "solved", "total", "exclusive_ids"}
        assert [r["exclusive_ids"] for r in rows if r["category"] == "contract"] == ["", "c2"]


def test_log_roundtrip(tmp_path):
    rec = record("a", "feedback:3", 0, 2, 3)
    path = tmp_path / "l.jsonl"
    path.write_text(json.dumps({"type": "header", "seed": 0}) + "\n" + json.dumps(rec.to_dict()) + "\n{torn")
    header, recs = load_log(path)
    assert header["seed"] == 0 and recs == [rec]


def test_curves_csv_bytes(tmp_path):
    recs = [record("a", "feedback:3", 0, 2, 3), record("b", "feedback:3", 0, None, 3)]
    write_curves_csv([curve_success_vs_steps(recs, "feedback:3", GapKind.CONTRACT, 3)], tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text() == (
        "strategy,kind,x_axis,x,min,median,max\n"
        "feedback:3,contract,candidate_steps,1,0,0,0\n"
        "feedback:3,contract,candidate_steps,2,0.5,0.5,0.5\n"
        "feedback:3,contract,candidate_steps,3,0.5,0.5,0.5\n"
    )
