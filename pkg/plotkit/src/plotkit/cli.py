"""`plotkit plot <recipe.cfg> [...]` renders one image per recipe file."""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from plotkit.recipes import PlotError, load_recipe
from plotkit.render import render


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="plotkit")
    sub = parser.add_subparsers(dest="command", required=True)
    plot = sub.add_parser("plot", help="render figures from recipe files")
    plot.add_argument("recipes", nargs="+", help="recipe .cfg files")
    args = parser.parse_args(argv)
    status = 0
    for path in args.recipes:
        try:
            out = render(load_recipe(path))
            print(f"{path} -> {out}")
        except (PlotError, FileNotFoundError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            status = 1
    return status


if __name__ == "__main__":
    sys.exit(main())
