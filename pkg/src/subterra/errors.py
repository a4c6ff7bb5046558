"""Exception types raised across the simulator."""


class SubterraError(Exception):
    """Base class for all simulator errors."""


class SchemaError(SubterraError):
    """Document does not conform to its schema."""


class ArtifactInWallError(SchemaError):
    """An artifact position lies inside a solid voxel."""


class OriginInSolidError(SubterraError):
    """Ray origin is inside a solid voxel."""


class StartUntraversableError(SubterraError):
    """Planner start cell is not traversable."""


class InventoryEmptyError(SubterraError):
    """Robot has no relay modules left for the requested tier."""


class UnregisteredTopicError(SubterraError):
    """Stream publish on a topic missing from the channel table."""


class UnknownFailureKindError(SubterraError):
    """Failure script entry with an unrecognized kind."""


class InsufficientHistoryError(SubterraError):
    """Pose history does not cover the requested window."""
