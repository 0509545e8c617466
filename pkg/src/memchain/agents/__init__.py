"""Agent drivers: render a prompt, call the model, parse the reply into a delta."""

from .drivers import (
    CORRECTIVE_LINE,
    answer_from_document,
    answer_from_summary,
    extract,
    infer,
    plan,
    refine,
    summarize_chunk,
    synthesize,
)
from .models import (
    FREE_FORM_TASK_INST,
    MULTIPLE_CHOICE_TASK_INST,
    AgentDelta,
    AgentRuntime,
    DeltaKind,
    LlmExchange,
)
from .templates import PromptName, PromptTemplate, load_template, shipped_prompt_bytes

__all__ = [
    "AgentDelta",
    "AgentRuntime",
    "CORRECTIVE_LINE",
    "DeltaKind",
    "FREE_FORM_TASK_INST",
    "LlmExchange",
    "MULTIPLE_CHOICE_TASK_INST",
    "PromptName",
    "PromptTemplate",
    "answer_from_document",
    "answer_from_summary",
    "extract",
    "infer",
    "load_template",
    "plan",
    "refine",
    "shipped_prompt_bytes",
    "summarize_chunk",
    "synthesize",
]
