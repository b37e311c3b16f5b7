"""Figure recipes and their flat `key = value` config files."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

FAMILIES = ("structure", "sweep", "evolution")


class PlotError(ValueError):
    pass


@dataclass(frozen=True)
class FigureRecipe:
    family: str
    inputs: Tuple[str, ...]
    output: str
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    # structure maps: which decision column to color by (alpha or beta);
    # inferred from the CSV header when empty
    value_column: str = ""
    log_y: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise PlotError(f"unknown figure family {self.family!r}")
        if not self.inputs:
            raise PlotError("recipe needs at least one input CSV")
        if not self.output:
            raise PlotError("recipe needs an output path")


def parse_recipe_file(path: str) -> Dict[str, str]:
    values: Dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise PlotError(f"{path}:{lineno}: expected `key = value`")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key.startswith("figure."):
                raise PlotError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value
    return values


def load_recipe(path: str) -> FigureRecipe:
    values = parse_recipe_file(path)

    def get(key: str, default: Optional[str] = None) -> Optional[str]:
        return values.get(f"figure.{key}", default)

    family = get("family")
    if family is None:
        raise PlotError(f"{path}: missing figure.family")
    inputs = tuple(p.strip() for p in (get("input") or "").split(",") if p.strip())
    output = get("output")
    if output is None:
        raise PlotError(f"{path}: missing figure.output")
    return FigureRecipe(
        family=family,
        inputs=inputs,
        output=output,
        title=get("title", "") or "",
        xlabel=get("xlabel", "") or "",
        ylabel=get("ylabel", "") or "",
        value_column=get("value_column", "") or "",
        log_y=(get("log_y", "false") or "").lower() in ("true", "1", "yes"),
    )
