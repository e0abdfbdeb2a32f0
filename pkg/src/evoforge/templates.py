"""Prompt templates: package defaults, overridable per problem directory."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

DEFAULT_DIR = Path(__file__).parent / "templates"


class TemplateSet:
    """Named text templates with `{placeholder}` substitution.

    A problem directory may carry a `templates/` subdirectory whose files
    shadow the package defaults of the same name.
    """

    def __init__(self, override_dir: Optional[Path] = None) -> None:
        self.override_dir = Path(override_dir) if override_dir else None
        self._cache = {}

    def load(self, name: str) -> str:
        if name in self._cache:
            return self._cache[name]
        filename = f"{name}.txt"
        if self.override_dir is not None:
            candidate = self.override_dir / filename
            if candidate.is_file():
                text = candidate.read_text()
                self._cache[name] = text
                return text
        default = DEFAULT_DIR / filename
        if not default.is_file():
            raise FileNotFoundError(f"no template named {name!r}")
        text = default.read_text()
        self._cache[name] = text
        return text

    def render(self, name: str, **placeholders) -> str:
        return self.load(name).format(**placeholders)


def for_problem(problem_dir) -> TemplateSet:
    return TemplateSet(override_dir=Path(problem_dir) / "templates")
