"""Rule-based error correction with mined ``A.*B`` error templates."""

from .template import (
    AppliedCorrection,
    CorrectiveAction,
    MatchSpan,
    Template,
    TemplateError,
    TemplateSet,
    apply_action,
    apply_correction,
    compile_set,
    find_matches,
    parse_template,
    read_templates,
    write_templates,
)

__all__ = [
    "AppliedCorrection",
    "CorrectiveAction",
    "MatchSpan",
    "Template",
    "TemplateError",
    "TemplateSet",
    "apply_action",
    "apply_correction",
    "compile_set",
    "find_matches",
    "parse_template",
    "read_templates",
    "write_templates",
]
__version__ = "0.1.0"
