"""subterra: deterministic multi-robot underground exploration simulator.

Subpackages cover the ground-truth world, per-robot mapping, path planning,
exploration goal selection, artifact detection fusion, the three-tier radio
model, record replication, the mission engine, and the operator gateway.
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
