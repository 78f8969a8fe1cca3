"""Prototype text rendering: "template, surface name, gloss".

Three templates per dataset family; when the gloss is empty the rendered
text degrades to "template, surface name".
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["TEMPLATES", "PrototypeText", "render_prototype"]

TEMPLATES: dict[str, tuple[str, str, str]] = {
    "nyt": (
        "The news is about",
        "The news is related to",
        "The topic of this passage is",
    ),
    "20news": (
        "The topic of this post is",
        "They are discussing",
        "This post mainly talks about",
    ),
}


def render_prototype(surface_name: str, gloss: str, template_id: int, dataset: str) -> str:
    key = dataset.lower()
    if key not in TEMPLATES:
        raise ValueError(f"unknown dataset {dataset!r}; expected one of {sorted(TEMPLATES)}")
    if template_id not in (1, 2, 3):
        raise ValueError(f"template_id must be 1, 2, or 3, got {template_id}")
    name = surface_name.strip()
    if not name:
        raise ValueError("empty surface name")
    rendered = f"{TEMPLATES[key][template_id - 1]}, {name}"
    if gloss.strip():
        rendered += f", {gloss.strip()}"
    return rendered


@dataclass(frozen=True)
class PrototypeText:
    surface_name: str
    gloss: str
    template_id: int
    rendered: str

    @classmethod
    def build(cls, surface_name: str, gloss: str, template_id: int, dataset: str) -> "PrototypeText":
        rendered = render_prototype(surface_name, gloss, template_id, dataset)
        return cls(surface_name=surface_name, gloss=gloss, template_id=template_id, rendered=rendered)

    def __post_init__(self) -> None:
        if not self.rendered:
            raise ValueError("rendered prototype text must be non-empty")
