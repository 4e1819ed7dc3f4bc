"""Whole-slide preprocessing: tissue masking, tiling, clustering, bag files."""

from .bags import (
    DEFAULT_BAGS_PER_SLIDE,
    MAGIC,
    Bag,
    BagDataset,
    BagManifest,
    SlideEntry,
    load_split,
    read_bag,
    sample_bags,
    validate_bag_bytes,
    validate_bag_file,
    write_bag,
)
from .cluster import ClusterAssignment, cluster_tiles, sort_clusters
from .mask import (
    MIN_TISSUE_FRACTION,
    TILE_SIDE,
    TileCoord,
    TissueMask,
    select_tiles,
    tissue_mask,
)

__all__ = [
    "DEFAULT_BAGS_PER_SLIDE",
    "MAGIC",
    "MIN_TISSUE_FRACTION",
    "TILE_SIDE",
    "Bag",
    "BagDataset",
    "BagManifest",
    "ClusterAssignment",
    "SlideEntry",
    "TileCoord",
    "TissueMask",
    "cluster_tiles",
    "load_split",
    "read_bag",
    "sample_bags",
    "select_tiles",
    "sort_clusters",
    "tissue_mask",
    "validate_bag_bytes",
    "validate_bag_file",
    "write_bag",
]
