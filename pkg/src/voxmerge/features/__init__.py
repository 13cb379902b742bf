"""Hand-designed edge features and the block registry."""
from .blocks import (
    BLOCKS, HAND_BLOCKS, Block, EdgeContext, Resources, VolumeSet, block_length, compute_block, edge_features,
)

__all__ = [
    "BLOCKS", "HAND_BLOCKS", "Block", "EdgeContext", "Resources", "VolumeSet", "block_length", "compute_block",
    "edge_features",
]
