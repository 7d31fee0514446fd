"""
Renders every prompt in the pipeline from the text templates under
src/generation/templates/.

A template file holds a "[system]" section and a "[user]" section.
Lookup goes from most to least specific:

    {stage}.{mode}.{strategy}.txt -> {stage}.{mode}.txt -> {stage}.txt

Placeholders are lower-case names in single braces, e.g. {subject_name}.
Any other brace text (JSON examples, {{Infobox ...}}) is left alone.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional

from src.core.errors import PromptRenderError
from src.core.models import Persona, Subject
from src.core.run_config import STAGES, RunConfig

logger = logging.getLogger("Materializer.PromptForge")

TEMPLATE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "templates")

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")
_SECTION = re.compile(r"^\[(system|user)\]\s*$", re.MULTILINE)

# Stages rendered with the persona in their system text.
PERSONA_STAGES = ("outline", "elicitation", "ner", "arbitration", "self_grounding")


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    stage: str
    placeholders_filled: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class _Template:
    name: str
    system: str
    user: str
    sha256: str


def _parse_template(name: str, raw: str) -> _Template:
    parts = _SECTION.split(raw)
    # split yields ['', 'system', body, 'user', body]
    sections = dict(zip(parts[1::2], parts[2::2]))
    if set(sections) != {"system", "user"}:
        raise PromptRenderError(f"Template {name} must have exactly one [system] and one [user] section")
    return _Template(
        name=name,
        system=sections["system"].strip("\n"),
        user=sections["user"].strip("\n"),
        sha256=hashlib.sha256(raw.encode("utf-8")).hexdigest(),
    )


class PromptForge:
    """Loads all templates once; rendering afterwards is read-only and thread-safe."""

    def __init__(self, template_dir: str = TEMPLATE_DIR):
        self.template_dir = template_dir
        self._templates: dict[str, _Template] = {}
        self._personas: dict[Persona, str] = {}
        self._load()

    def _load(self) -> None:
        if not os.path.isdir(self.template_dir):
            raise PromptRenderError(f"Template directory not found: {self.template_dir}")
        for filename in sorted(os.listdir(self.template_dir)):
            if not filename.endswith(".txt"):
                continue
            with open(os.path.join(self.template_dir, filename), "r", encoding="utf-8") as f:
                raw = f.read()
            name = filename[:-len(".txt")]
            self._templates[name] = _parse_template(name, raw)

        persona_dir = os.path.join(self.template_dir, "personas")
        for persona in Persona:
            path = os.path.join(persona_dir, f"{persona.value}.txt")
            if not os.path.exists(path):
                raise PromptRenderError(f"Missing persona file: {path}")
            with open(path, "r", encoding="utf-8") as f:
                self._personas[persona] = f.read().strip()
        logger.debug(f"Loaded {len(self._templates)} templates from {self.template_dir}")

    def checksums(self) -> dict:
        """sha256 of every template and persona file, recorded in config.json."""
        sums = {f"{name}.txt": t.sha256 for name, t in sorted(self._templates.items())}
        for persona, text in sorted(self._personas.items(), key=lambda kv: kv[0].value):
            sums[f"personas/{persona.value}.txt"] = hashlib.sha256(text.encode("utf-8")).hexdigest()
        return sums

    def persona_block(self, persona: Persona) -> str:
        return self._personas[Persona(persona)]

    def template_for(self, stage: str, config: RunConfig) -> _Template:
        if stage not in STAGES:
            raise PromptRenderError(f"Unknown stage: {stage}")
        for name in (
            f"{stage}.{config.mode.value}.{config.strategy.value}",
            f"{stage}.{config.mode.value}",
            stage,
        ):
            if name in self._templates:
                return self._templates[name]
        raise PromptRenderError(f"No template for stage {stage} ({config.mode.value}, {config.strategy.value})")

    def render(self, stage: str, config: RunConfig, subject: Subject, context: Optional[Mapping] = None) -> PromptBundle:
        """
        Fill the template for (stage, mode, strategy).

        Raises PromptRenderError when the template names a placeholder that
        neither the config, the subject nor `context` supplies.
        """
        template = self.template_for(stage, config)
        values = self._base_values(config, subject)
        for key, value in (context or {}).items():
            values[key] = _as_text(key, value)

        used = {}

        def substitute(match: re.Match) -> str:
            key = match.group(1)
            if key not in values:
                raise PromptRenderError(f"Template {template.name} needs placeholder {{{key}}}")
            used[key] = values[key]
            return values[key]

        system_text = _PLACEHOLDER.sub(substitute, template.system)
        user_text = _PLACEHOLDER.sub(substitute, template.user)
        return PromptBundle(
            system_text=system_text,
            user_text=user_text,
            stage=stage,
            placeholders_filled=dict(sorted(used.items())),
        )

    def _base_values(self, config: RunConfig, subject: Subject) -> dict:
        values = {
            "subject_name": subject.name,
            "persona_block": self.persona_block(config.persona),
            "avg_words_per_article": str(config.avg_words_per_article or 716),
            "grounding_block": "",
        }
        if config.root_subject:
            values["root_subject"] = config.root_subject
        return values


def _as_text(key: str, value) -> str:
    if key == "outline_block" and not isinstance(value, str):
        return json.dumps({"sections": list(value)}, ensure_ascii=False)
    if key == "phrases_block" and not isinstance(value, str):
        return "\n".join(value)
    return str(value)
