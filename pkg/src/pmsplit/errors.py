"""Exception hierarchy shared by every layer."""

import errno


class PmsplitError(Exception):
    """Base class for all errors raised by this package."""


class DeviceBoundsError(PmsplitError, IndexError):
    """An access fell outside the emulated device."""


class FsError(PmsplitError, OSError):
    errno_code = errno.EIO

    def __init__(self, message: str = ""):
        super().__init__(self.errno_code, message)


class NotFound(FsError, FileNotFoundError):
    errno_code = errno.ENOENT


class Exists(FsError, FileExistsError):
    errno_code = errno.EEXIST


class NoSpace(FsError):
    errno_code = errno.ENOSPC


class JournalFull(NoSpace):
    """A single transaction does not fit in one journal half."""


class InvalidArgument(FsError):
    errno_code = errno.EINVAL


class BadFileDescriptor(FsError):
    errno_code = errno.EBADF


class Unmountable(FsError):
    errno_code = errno.EUCLEAN


class LogCorrupt(FsError):
    errno_code = errno.EBADMSG
