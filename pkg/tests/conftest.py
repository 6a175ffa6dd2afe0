from pathlib import Path

import pytest

from specloop.source import GapKind
from specloop.strategy import AttemptTrace, Outcome
from specloop.task import SpecTask
from specloop.verifier import Verdict

CALLEE_DIR = Path(__file__).resolve().parents[1] / "src" / "specloop" / "fixtures" / "callee"
CALLEE = (CALLEE_DIR / "Doubler.java").read_text()
DERIVED_CONTRACT = r"/*@ normal_behavior ensures \result == 2*x; assignable \nothing; @*/"

REVERSE = """public class Reverse {
    /*@ public normal_behavior
      @ requires a != null;
      @ ensures (\\forall int k; 0 <= k && k < a.length; a[k] == \\old(a[a.length - 1 - k]));
      @ assignable a[*];
      @*/
    public void reverse(int[] a) {
        int i = 0;
        int j = a.length - 1;
        //Add invariant here
        while (i < j) {
            int t = a[i];
            a[i] = a[j];
            a[j] = t;
            i++;
            j--;
        }
    }
}
"""

REVERSE_INVARIANT = """/*@ loop_invariant 0 <= i && i <= j + 1 && j == a.length - 1 - i;
  @ decreases j - i;
  @ assignable a[*];
@*/"""


@pytest.fixture
def callee_task():
    return SpecTask.from_text("callee", CALLEE, GapKind.CONTRACT, gap_hint="g", target_method="f")


@pytest.fixture
def reverse_task():
    return SpecTask.from_text("reverse", REVERSE, GapKind.INVARIANT)


# (status, criterion, seconds, detail) rows filled in by test_acceptance.py
ACCEPTANCE_RESULTS: list[tuple[str, str, float, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for status, name, seconds, detail in ACCEPTANCE_RESULTS:
        line = f"{status} {name} ({seconds:.2f}s)"
        terminalreporter.write_line(line + (f": {detail}" if detail else ""))


def fake_outcome(strategy: str, solved_at, budget: int, initial: int = 1000, per_step: int = 200) -> Outcome:
    """Outcome with ``solved_at`` (or ``budget`` when unsolved) traces of fixed size."""
    n = solved_at if solved_at is not None else budget
    traces = []
    cumulative = 0
    for i in range(1, n + 1):
        cumulative += initial + per_step
        ok = solved_at is not None and i == solved_at
        verdict = Verdict.success() if ok else Verdict.semantic_error(["Use Case"])
        traces.append(AttemptTrace(i, i - 1, 0, "/*@ ensures true; @*/", verdict, initial, per_step, cumulative))
    return Outcome(strategy, solved_at is not None, solved_at, traces, initial)
