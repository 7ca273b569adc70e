"""Palette-layer decomposition of images and radiance-field scenes.

A scene (a single image or a multi-view capture) is decomposed into ordered
pure-colored layers with a jointly learned palette; recoloring then amounts
to editing palette entries and re-rendering.
"""

__version__ = "0.1.0"
