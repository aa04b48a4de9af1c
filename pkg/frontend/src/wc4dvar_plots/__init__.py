from .figures import (FigureSpec, PlotInputError, read_map, read_trace,
                      render, variant_color)

__all__ = ["FigureSpec", "PlotInputError", "read_map", "read_trace",
           "render", "variant_color"]
__version__ = "0.1.0"
