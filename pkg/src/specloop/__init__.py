"""Verifier-in-the-loop elicitation of auxiliary JML annotations.

An LLM oracle proposes a loop invariant or callee contract for the single gap
in a partially annotated Java file; a verifier checks the spliced draft; a
strategy (feedback, sampling or mixed) decides how to recover from failures.
"""

from specloop.oracle import (
    HttpOracle, OracleReply, ReplayOracle, ScriptedOracle, StochasticOracle, StochasticOracleConfig,
    StreamKey,
)
from specloop.source import (
    AnnotatedDocument, AnnotationCandidate, GapKind, GapSite, extract_annotation, parse_document,
    splice, validate_shape,
)
from specloop.strategy import (
    Outcome, StrategyConfig, TokenCostModel, measured_token_ratio, predicted_cost_feedback,
    predicted_cost_sampling, run_feedback, run_mixed, run_sampling, run_strategy,
)
from specloop.task import SpecTask
from specloop.verifier import MockRule, MockVerifier, SubprocessVerifier, Verdict, VerdictKind

__version__ = "0.1.0"
