"""skillgraph: graph-attention skill assessment from instrument trajectories.

The pipeline: trajectory CSVs -> kinematic node features -> per-clip graphs
-> spectral self-supervised pretraining and/or supervised training of a
two-layer graph-attention encoder -> correlation/classification reports and
plot-ready 2-D embedding projections.
"""

__version__ = "0.1.0"

from .errors import (
    DataFormatError,
    DegenerateInputError,
    GraphError,
    KinematicsError,
    SchemaMismatchError,
    SkillGraphError,
)

__all__ = [
    "__version__",
    "SkillGraphError",
    "DataFormatError",
    "KinematicsError",
    "GraphError",
    "SchemaMismatchError",
    "DegenerateInputError",
]
