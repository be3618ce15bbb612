"""User-space library file system."""

from .core import Config, FileState, MappedRegion, Mode, RecoveryStats, StagedRange, Usplit, recover_fs, replay_log
from .log import EntryFlag, LogEntry, OperationLog, Opcode
from .shadow import ShadowFs

__all__ = [
    "Config",
    "EntryFlag",
    "FileState",
    "LogEntry",
    "MappedRegion",
    "Mode",
    "Opcode",
    "OperationLog",
    "RecoveryStats",
    "ShadowFs",
    "StagedRange",
    "Usplit",
    "recover_fs",
    "replay_log",
]
