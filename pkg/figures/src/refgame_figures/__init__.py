"""Render figure analogs from the analysis CSVs.

Purely presentational: every plotted point is a CSV value, echoed verbatim
into a sidecar JSON so correctness is testable without image diffing.
"""

__version__ = "0.1.0"

from .render import FIGURE_KINDS, FigureSpec, SchemaError, render

__all__ = ["FIGURE_KINDS", "FigureSpec", "SchemaError", "render", "__version__"]
