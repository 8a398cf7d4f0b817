"""Graph Slepian analysis and Slepian-basis graph networks in numpy."""

__version__ = "0.1.0"
