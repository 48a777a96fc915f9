"""Evaluation protocols: seat-balanced pairings, cross-play, bomb-out audits,
action-type traces and the belief cross-entropy experiment."""

from .belief import (
    BeliefModel,
    BeliefResult,
    belief_cross_entropy,
    belief_samples,
    deck_prior_entropy,
    hint_only_context,
    slot_context,
)
from .diagnostics import (
    BombAuditReport,
    BombEvent,
    RecordingPolicy,
    TraceRow,
    action_type_histogram,
    action_type_trace,
    bombout_qvalue_audit,
    legal_type_availability,
)
from .export import (
    REPORT_SCHEMA_VERSION,
    read_json,
    read_reports_csv,
    write_json,
    write_reports_csv,
    write_trace_csv,
)
from .pairing import (
    ACTION_TYPES,
    DEFAULT_EVAL_GAMES,
    CrossPlayResult,
    EvalReport,
    crossplay_matrix,
    episode_score,
    evaluate_pairing,
    game_seed,
)

__all__ = [
    "ACTION_TYPES", "BeliefModel", "BeliefResult", "BombAuditReport", "BombEvent", "CrossPlayResult",
    "DEFAULT_EVAL_GAMES", "EvalReport", "REPORT_SCHEMA_VERSION", "RecordingPolicy", "TraceRow",
    "action_type_histogram", "action_type_trace", "belief_cross_entropy", "belief_samples",
    "bombout_qvalue_audit", "crossplay_matrix", "deck_prior_entropy", "episode_score", "evaluate_pairing",
    "game_seed", "hint_only_context", "legal_type_availability", "read_json", "read_reports_csv",
    "slot_context", "write_json", "write_reports_csv", "write_trace_csv",
]
