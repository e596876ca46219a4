"""Story text to World Spec extraction with a bounded repair loop.

The extractor asks the completion backend for a World Spec JSON document,
validates it, and on failure feeds the violations back as a repair prompt.
Structurally sound but incomplete documents skip the repair round entirely
and go through deterministic template completion instead, so a cooperative
backend costs exactly one call.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .provider import ChatMessage, PromptRequest, ProviderError
from .worldspec import (
    CompletionError,
    ParseError,
    Violation,
    WorldSpec,
    complete_with_report,
    decode_world_spec,
    validate_world_spec,
)

# every extraction prompt names these story facets explicitly
EXTRACTION_ELEMENTS = (
    "spatial context",
    "temporal cues",
    "sources of conflict",
    "role distribution",
    "task motivation",
)

_SCHEMA_HINT = """\
Return one JSON object with exactly these top-level keys:
  "schema_version": the integer 1
  "title": short string naming the scenario
  "temporal_cue": string describing the era or time of the story
  "locations": list of {"id", "name", "description", "adjacent_to": [location ids]}
  "characters": list of {"id", "name", "archetype", "public_description",
                "secret": optional string,
                "goals": [{"description", "priority" in [0,1]}],
                "initial_location": location id,
                "initial_affect": {"valence" in [-1,1], "arousal" in [0,1]}}
  "relationships": list of {"from": character id, "to": character id,
                "trust" in [0,1], "power" in [-1,1], "dependency" in [0,1], "alliance": bool}
  "conflicts": list of {"id", "description", "parties": [two or more character ids], "stakes"}
  "quests": list of {"id", "description", "assigned_to": character id, "trigger", "resolution"}
All ids must be unique snake_case strings. Adjacency must be symmetric.
Reply with JSON only, no prose and no code fences."""

_FENCE_RE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


@dataclass
class ExtractionConfig:
    max_repair_attempts: int = 3  # total backend calls, first attempt included
    temperature: float = 0.2
    completion_fallback: bool = True
    max_output_tokens: int = 4096


@dataclass
class ExtractionResult:
    spec: WorldSpec
    attempts: int  # backend calls actually made
    repair_rounds: int
    completed: bool  # template completion filled gaps
    completion_actions: list[str] = field(default_factory=list)


class ExtractionFailed(Exception):
    """All repair attempts exhausted without a valid World Spec."""

    def __init__(self, attempts: int, violations: list[Violation], last_text: str):
        self.attempts = attempts
        self.violations = violations
        self.last_text = last_text
        summary = "; ".join(f"{v.code}({v.subject})" for v in violations) or "unparseable output"
        super().__init__(f"extraction failed after {attempts} attempts: {summary}")


def build_extraction_prompt(story_text: str, config: ExtractionConfig) -> PromptRequest:
    system_text = (
        "You convert a short story into a structured role-play world description. "
        "Identify the spatial context (places and how they connect), temporal cues "
        "(when things happen and in what order), sources of conflict (who wants what "
        "and why they clash), role distribution (who the playable characters are and "
        "what drives them), and task motivation (concrete quests a player could take "
        "up).\n\n" + _SCHEMA_HINT
    )
    return PromptRequest(
        system_text=system_text,
        messages=(ChatMessage("user", f"Story:\n{story_text}"),),
        temperature=config.temperature,
        max_output_tokens=config.max_output_tokens,
        tag="extract",
    )


def build_repair_prompt(
    story_text: str,
    previous_text: str,
    violations: list[Violation],
    config: ExtractionConfig,
) -> PromptRequest:
    issues = "\n".join(f"- {v.code} at {v.subject}: {v.message}" for v in violations)
    user_text = (
        f"Story:\n{story_text}\n\n"
        f"Your previous answer:\n{previous_text}\n\n"
        f"That answer was rejected for these reasons:\n{issues}\n\n"
        "Produce a corrected JSON document that fixes every issue. "
        "Keep everything that was already valid. Reply with JSON only."
    )
    system_text = (
        "You repair a structured role-play world description so it passes "
        "validation. Preserve the story's spatial context, temporal cues, "
        "sources of conflict, role distribution, and task motivation.\n\n" + _SCHEMA_HINT
    )
    return PromptRequest(
        system_text=system_text,
        messages=(ChatMessage("user", user_text),),
        temperature=config.temperature,
        max_output_tokens=config.max_output_tokens,
        tag="repair",
    )


def _strip_code_fence(text: str) -> str:
    match = _FENCE_RE.search(text)
    return match.group(1) if match else text


def _parse_failure(error: ParseError) -> list[Violation]:
    where = "document" if error.line is None else f"line {error.line}"
    return [Violation("PARSE_ERROR", where, str(error))]


def extract_world_spec(story_text: str, provider, config: ExtractionConfig | None = None) -> ExtractionResult:
    """Run the extract-validate-repair loop against a completion backend.

    Backend calls are capped at config.max_repair_attempts; repair prompts
    carry the previous output plus its violations. Incomplete but decodable
    output is finished by template completion when the fallback is enabled,
    without spending a repair call.
    """
    config = config or ExtractionConfig()
    if config.max_repair_attempts < 1:
        raise ValueError("max_repair_attempts must be >= 1")

    request = build_extraction_prompt(story_text, config)
    last_text = ""
    last_violations: list[Violation] = []
    attempts = 0

    while attempts < config.max_repair_attempts:
        attempts += 1
        try:
            response = provider.complete(request)
        except ProviderError:
            raise
        last_text = response.text

        try:
            spec = decode_world_spec(_strip_code_fence(last_text))
        except ParseError as error:
            last_violations = _parse_failure(error)
            if attempts < config.max_repair_attempts:
                request = build_repair_prompt(story_text, last_text, last_violations, config)
            continue

        violations = validate_world_spec(spec)
        if not violations:
            return ExtractionResult(
                spec=spec,
                attempts=attempts,
                repair_rounds=attempts - 1,
                completed=False,
            )

        last_violations = violations
        if config.completion_fallback:
            try:
                completed_spec, actions = complete_with_report(spec)
            except CompletionError:
                pass  # gaps a template cannot fill; fall through to repair
            else:
                return ExtractionResult(
                    spec=completed_spec,
                    attempts=attempts,
                    repair_rounds=attempts - 1,
                    completed=True,
                    completion_actions=actions,
                )

        if attempts < config.max_repair_attempts:
            request = build_repair_prompt(story_text, last_text, violations, config)

    raise ExtractionFailed(attempts, last_violations, last_text)
