"""Kernel-side journaled file system."""

from .fs import Extent, Inode, Kfs, RelinkOp, RelinkStats, Stat, mkfs, mount
from .layout import BLOCK_SIZE, Geometry

__all__ = [
    "BLOCK_SIZE",
    "Extent",
    "Geometry",
    "Inode",
    "Kfs",
    "RelinkOp",
    "RelinkStats",
    "Stat",
    "mkfs",
    "mount",
]
