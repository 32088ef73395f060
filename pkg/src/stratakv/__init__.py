"""stratakv: a fully-versioned key-value store.

The engine keeps sorted immutable runs tagged with version sets,
arranged in size-doubling levels and kept dense per version by
re-splitting merged runs along version subtrees. A copy-on-write B-tree
baseline, a brute-force oracle and an IO-accounted benchmark harness
ship alongside the store.
"""

from .bench import cow_slowdown, lfs_rho, run_bench
from .config import StoreConfig, load_config
from .cow import CowTree
from .errors import StoreError
from .oracle import ReferenceOracle
from .store import SdaStore
from .versions import VersionTree
from .workload import WorkloadSpec, gen_workload

__version__ = "0.1.0"

__all__ = [
    "CowTree",
    "ReferenceOracle",
    "SdaStore",
    "StoreConfig",
    "StoreError",
    "VersionTree",
    "WorkloadSpec",
    "cow_slowdown",
    "gen_workload",
    "lfs_rho",
    "load_config",
    "run_bench",
    "__version__",
]
