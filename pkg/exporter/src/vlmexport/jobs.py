"""Export job description and its JSON config dialect."""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

DEFAULT_TEMPLATE = "This is a photo of the {} in the scene."

KIND_NAMES = {"thing": 0, "stuff": 1}


@dataclass(frozen=True)
class ExportJob:
    """What to export: model, images, categories, prompt template, output."""

    model: str
    images: tuple[str, ...]
    categories: tuple[tuple[str, int], ...]  # (name, 0=thing | 1=stuff)
    output_dir: str
    template: str = DEFAULT_TEMPLATE
    image_size: int = 512

    def __post_init__(self):
        if not self.categories:
            raise ValueError("category list must be non-empty")
        if self.template.count("{}") != 1:
            raise ValueError("prompt template needs exactly one {} substitution slot")
        names = [name for name, _ in self.categories]
        if any(not name for name in names):
            raise ValueError("category names must be non-empty")
        if len(set(names)) != len(names):
            raise ValueError("category names must be unique")
        if any(kind not in (0, 1) for _, kind in self.categories):
            raise ValueError("category kinds must be 0 (thing) or 1 (stuff)")
        if self.image_size < 1:
            raise ValueError(f"image_size must be positive, got {self.image_size}")

    def prompts(self) -> list[str]:
        return [self.template.format(name) for name, _ in self.categories]


def load_job(path) -> ExportJob:
    """Parse the JSON job config; unknown keys are rejected like the engine's."""
    try:
        payload = json.loads(Path(path).read_text("utf-8"))
    except json.JSONDecodeError as err:
        raise ValueError(f"{path}: invalid JSON: {err}") from err
    if not isinstance(payload, dict):
        raise ValueError(f"{path}: job config must be a JSON object")
    known = {f.name for f in fields(ExportJob)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ValueError(f"{path}: unknown job keys: {', '.join(unknown)}")

    categories = payload.get("categories", [])
    parsed = []
    for entry in categories:
        if isinstance(entry, dict):
            name = entry.get("name", "")
            kind = entry.get("kind", "")
        else:
            name, kind = entry
        if isinstance(kind, str):
            if kind.lower() not in KIND_NAMES:
                raise ValueError(f"{path}: unknown category kind '{kind}'")
            kind = KIND_NAMES[kind.lower()]
        parsed.append((str(name), int(kind)))
    payload["categories"] = tuple(parsed)
    payload["images"] = tuple(payload.get("images", ()))
    return ExportJob(**payload)
