"""Exception types shared across the package."""


class SkillGraphError(Exception):
    """Base class for all errors raised by skillgraph."""


class DataFormatError(SkillGraphError):
    """Input file is missing, malformed, or violates a documented invariant."""


class KinematicsError(SkillGraphError):
    """A trajectory cannot be turned into kinematics (too short, zero dt)."""


class GraphError(SkillGraphError):
    """Invalid graph structure or spectral computation failure."""


class SchemaMismatchError(SkillGraphError):
    """Checkpoint and dataset disagree on the feature schema."""


class DegenerateInputError(SkillGraphError):
    """An operation is mathematically undefined for this input (zero variance)."""
