"""Token recovery against a co-batched LLM victim and candidate scoring against classifiers."""

from .classification import (
    CandidateScore,
    PurityReport,
    infer_class,
    knn_class_purity,
    scale_profile,
    score_candidates,
    select_probe,
)
from .experiments import (
    ClsRun,
    LlmSummary,
    profile_purity,
    run_cls_attack,
    run_llm_attack,
    summarize_llm,
    write_cls_csv,
)
from .recovery import (
    LanguagePrior,
    Prober,
    RecoveryConfig,
    RecoveryResult,
    TokenGuess,
    recover_first_token,
    recover_sequence,
    recover_token_at,
    write_results_csv,
)

__all__ = [
    "CandidateScore", "ClsRun", "LanguagePrior", "LlmSummary", "Prober", "PurityReport", "RecoveryConfig",
    "RecoveryResult", "TokenGuess", "infer_class", "knn_class_purity", "profile_purity", "recover_first_token",
    "recover_sequence", "recover_token_at", "run_cls_attack", "run_llm_attack", "scale_profile",
    "score_candidates", "select_probe", "summarize_llm", "write_cls_csv", "write_results_csv",
]
