from __future__ import annotations

from typing import Any, Dict

from jinja2 import Environment, PackageLoader, StrictUndefined, select_autoescape

# Plain-text reports and config files; nothing here is HTML
_env = Environment(
    loader=PackageLoader("adir_cli", "templates"),
    autoescape=select_autoescape(enabled_extensions=("html",)),
    keep_trailing_newline=True,
    trim_blocks=True,
    lstrip_blocks=True,
    undefined=StrictUndefined,
)


def render_text(template_path: str, context: Dict[str, Any]) -> str:
    """
    Render a template from package resources at 'templates/{template_path}'.
    Example: render_text("eval_summary.txt.j2", {"report": report})
    """
    template = _env.get_template(template_path)
    return template.render(**(context or {}))
