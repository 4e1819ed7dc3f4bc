"""Tile-image to TRNB1 bag-file exporter built on a DenseNet-121 embedder."""

from .errors import ConfigError, ExportError, InputError
from .export import (
    FEATURE_WIDTH,
    TILES_PER_BAG,
    ExportJob,
    ExportReport,
    TileEmbedder,
    export,
    load_tileset,
)
from .formats import MAGIC, SlideRecord, save_manifest, write_bag

__all__ = [
    "ConfigError",
    "ExportError",
    "ExportJob",
    "ExportReport",
    "FEATURE_WIDTH",
    "InputError",
    "MAGIC",
    "SlideRecord",
    "TILES_PER_BAG",
    "TileEmbedder",
    "export",
    "load_tileset",
    "save_manifest",
    "write_bag",
]
