"""Generate a synthetic benchmark suite for offline runs.

Each task gets a small Java class with one gap, a stochastic-oracle profile
(per-task success probability, one correct annotation, a pool of wrong ones)
and mock-verifier rules that accept exactly the correct annotation.
"""

from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Union

from specloop.bench import write_manifest
from specloop.oracle import StochasticOracleConfig
from specloop.source import GapKind
from specloop.task import SpecTask
from specloop.verifier import MockRule, MockVerifier, Verdict

_INVARIANT_JAVA = """public class Sum{i} {{
    /*@ public normal_behavior
      @ requires 0 <= n && n <= 1000;
      @ ensures \\result == {c} * n;
      @*/
    public int scaled{i}(int n) {{
        int s = 0;
        int i = 0;
        //Add invariant here
        while (i < n) {{
            i++;
            s += {c};
        }}
        return s;
    }}
}}
"""

_CONTRACT_JAVA = """public class Scale{i} {{
    //@ ensures \\result == -{c}*x;
    int f{i}(int x) {{ return g{i}(-x); }}
    int g{i}(int x) {{ return {c}*x; }}
}}
"""


def _invariant_answers(c: int) -> tuple[str, list[str]]:
    correct = (f"/*@ loop_invariant 0 <= i && i <= n && s == {c} * i;\n"
               f"  @ decreases n - i;\n  @ assignable \\nothing;\n@*/")
    wrong = [
        f"/*@ loop_invariant 0 <= i && i < n && s == {c} * i;\n  @ decreases n - i;\n  @ assignable \\nothing;\n@*/",
        f"/*@ loop_invariant 0 <= i && i <= n && s == {c} * n;\n  @ decreases n - i;\n  @ assignable \\nothing;\n@*/",
        f"/*@ loop_invariant 0 <= i && i <= n && s == {c + 1} * i;\n  @ decreases n - i;\n  @ assignable \\nothing;\n@*/",
        f"/*@ loop_invariant (0 <= i && i <= n && s == {c} * i;\n  @ decreases n - i;\n  @ assignable \\nothing;\n@*/",
    ]
    return correct, wrong


def _contract_answers(c: int) -> tuple[str, list[str]]:
    correct = f"/*@ normal_behavior\n  @ ensures \\result == {c}*x;\n  @ assignable \\nothing;\n@*/"
    wrong = [
        f"/*@ normal_behavior\n  @ ensures \\result == -{c}*x;\n  @ assignable \\nothing;\n@*/",
        f"/*@ normal_behavior\n  @ ensures \\result == {c}+x;\n  @ assignable \\nothing;\n@*/",
        f"/*@ normal_behavior\n  @ ensures \\result >= {c}*x;\n  @ assignable \\nothing;\n@*/",
        f"/*@ normal_behavior\n  @ ensures (\\result == {c}*x;\n  @ assignable \\nothing;\n@*/",
    ]
    return correct, wrong


WRONG_LABELS = {
    GapKind.INVARIANT: [["Invariant Initially Valid"], ["Body Preserves Invariant"], ["Use Case"]],
    GapKind.CONTRACT: [["Post (g)"], ["Post (g)", "Use Case"], ["Post (f)"]],
}


def make_synthetic_suite(
    out_dir: Union[str, Path],
    n_tasks: int = 30,
    seed: int = 0,
    stuck_bias: float = 0.6,
    p_range: tuple[float, float] = (0.05, 0.6),
) -> dict[str, Path]:
    """Write Java sources, ``manifest.json``, ``profiles.json`` and ``rules.json``."""
    out = Path(out_dir)
    (out / "src").mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    tasks, profiles, rules = [], {}, []
    syntax = Verdict.syntax_error(
        'Error during JML parsing: Failed to parse JML fragment: Encountered unexpected token: "(" "("')
    rules.append(MockRule("predicate", "unbalanced_parens", syntax))
    for i in range(n_tasks):
        kind = GapKind.INVARIANT if i % 2 == 0 else GapKind.CONTRACT
        c = 2 + i
        if kind is GapKind.INVARIANT:
            path = out / "src" / f"Sum{i}.java"
            path.write_text(_INVARIANT_JAVA.format(i=i, c=c), encoding="utf-8")
            task = SpecTask(f"inv{i:02d}", path, kind, tags=("loop", "arithmetic"))
            correct, wrong = _invariant_answers(c)
        else:
            path = out / "src" / f"Scale{i}.java"
            path.write_text(_CONTRACT_JAVA.format(i=i, c=c), encoding="utf-8")
            task = SpecTask(f"con{i:02d}", path, kind, gap_hint=f"g{i}", target_method=f"f{i}",
                            tags=("submethod",))
            correct, wrong = _contract_answers(c)
        tasks.append(task)
        p = round(rng.uniform(*p_range), 3)
        profiles[task.id] = StochasticOracleConfig(p, correct, tuple(wrong), stuck_bias, seed).to_dict()
        rules.append(MockRule("exact", correct, Verdict.success()))
        for w, labels in zip(wrong, WRONG_LABELS[kind]):
            rules.append(MockRule("exact", w, Verdict.semantic_error(labels)))
    paths = {
        "manifest": out / "manifest.json",
        "profiles": out / "profiles.json",
        "rules": out / "rules.json",
        "config": out / "specloop.ini",
    }
    write_manifest(tasks, paths["manifest"])
    paths["profiles"].write_text(json.dumps({"tasks": profiles}, indent=2) + "\n", encoding="utf-8")
    MockVerifier(rules).dump(paths["rules"])
    paths["config"].write_text(
        "[oracle]\ntype = stochastic\nprofiles = profiles.json\n\n"
        "[verifier]\ntype = mock\nrules = rules.json\n\n"
        f"[run]\nseed = {seed}\nparallelism = 1\n",
        encoding="utf-8",
    )
    return paths
