"""BlocksWorld planning, prompt attribution, and insight memory.

Instances are plain dicts in the same form as the JSONL datasets written by
``planattr gen``. Errors raise :class:`PlanattrError` whose message starts
with the error kind.
"""

from ._core import (
    PlanattrError,
    apply_insight_actions,
    attribute,
    generate_dataset,
    generate_instance,
    normalize,
    parse_plan,
    question,
    reference_insights,
    render_prompt,
    run_experiment,
    solve,
    validate,
    visible_insights,
)

__all__ = [
    "PlanattrError",
    "apply_insight_actions",
    "attribute",
    "generate_dataset",
    "generate_instance",
    "normalize",
    "parse_plan",
    "question",
    "reference_insights",
    "render_prompt",
    "run_experiment",
    "solve",
    "validate",
    "visible_insights",
]
