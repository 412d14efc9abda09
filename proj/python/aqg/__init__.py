"""Python bindings for the aqg question-generation toolkit."""

from ._aqg import (
    DecodeOptions,
    EvalReport,
    GenerationOutput,
    RawExample,
    Vocabulary,
    build_ap_input,
    experiment_matrix,
    generate,
    load_checkpoint_model,
    meteor,
    mode_label,
    normalize_answer,
    oracle_answer,
    parse_mode,
    rouge_l,
    run_cli,
    run_grad_suite,
    select_answer_sentences,
    synthetic_corpus,
    tokenize,
)

__all__ = [
    "DecodeOptions",
    "EvalReport",
    "GenerationOutput",
    "RawExample",
    "Vocabulary",
    "build_ap_input",
    "experiment_matrix",
    "generate",
    "load_checkpoint_model",
    "meteor",
    "mode_label",
    "normalize_answer",
    "oracle_answer",
    "parse_mode",
    "rouge_l",
    "run_cli",
    "run_grad_suite",
    "select_answer_sentences",
    "synthetic_corpus",
    "tokenize",
]
