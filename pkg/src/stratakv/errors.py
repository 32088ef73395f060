"""Exception hierarchy shared by the store, the baseline tree and the oracle."""


class StoreError(Exception):
    """Base class for all stratakv errors."""


class UnknownVersionError(StoreError):
    """The version id does not exist in the version tree."""


class DeletedVersionError(StoreError):
    """The version id exists but has been deleted."""


class RootExistsError(StoreError):
    """create_root was called on a non-empty version tree."""


class VersionHasChildrenError(StoreError):
    """delete was attempted on a version that still has live children."""


class RootDeletionError(StoreError):
    """delete was attempted on the root version."""


class ValidationError(StoreError):
    """A key, value or argument violates a documented bound."""


class OutOfSpaceError(StoreError):
    """The allocator cannot satisfy the request even with chunking."""


class DoubleFreeError(StoreError):
    """An extent was released twice, or overlaps the free list."""


class ExtentInUseError(StoreError):
    """An extent referenced by the committed manifest was released."""


class CorruptionError(StoreError):
    """A checksum mismatch was detected while reading committed data."""


class NoValidManifestError(StoreError):
    """Recovery found no checksum-valid manifest on the device."""


class CrashPoint(BaseException):
    """Raised by injected kill hooks to simulate a crash mid-commit.

    Derives from BaseException so ordinary error handling in the write
    path cannot swallow it.
    """
