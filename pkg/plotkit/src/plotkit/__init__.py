"""Figure rendering for the relay scheduling harness's CSV artifacts."""

from plotkit.recipes import FigureRecipe, PlotError, load_recipe
from plotkit.render import render

__all__ = ["FigureRecipe", "PlotError", "load_recipe", "render"]
