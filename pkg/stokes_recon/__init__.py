"""stokes_recon – pressure-robust Taylor–Hood / mini solvers on triangles

Exposes the public API (meshes, spaces, the reconstruction operator and
the Stokes / Navier–Stokes drivers) **and** sets up a minimal logging
configuration so that every sub-module can call

```python
import logging
logger = logging.getLogger(__name__)
```

and honour a single environment variable `STOKESREC_LOG_LEVEL`.
"""

from __future__ import annotations

import logging
import os

# ------------------------------------------------------------------
# Default logging – honour env var, otherwise INFO.
# ------------------------------------------------------------------
LOG_LEVEL = os.getenv("STOKESREC_LOG_LEVEL", "INFO").upper()
if not logging.getLogger().handlers:
    logging.basicConfig(
        level=LOG_LEVEL,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%H:%M:%S",
    )

# Public API re-exports ------------------------------------------------
from .models import Element, ExperimentConfig  # noqa: E402  (import after logger)
from .mesh import Mesh, MeshFormatError, build_patches, generate_structured  # noqa: E402
from .spaces import DiscreteFunction, interpolate, lagrange_space, mini_space, rt_space  # noqa: E402
from .reconstruction import PatchSolveError, ReconstructionMap, build_reconstruction  # noqa: E402
from .solver import ConvergenceError, SolverError, solve_navier_stokes, solve_stokes  # noqa: E402
from .analysis import ExactSolution, preset  # noqa: E402

__all__ = [
    "Element",
    "ExperimentConfig",
    "Mesh",
    "MeshFormatError",
    "build_patches",
    "generate_structured",
    "DiscreteFunction",
    "interpolate",
    "lagrange_space",
    "mini_space",
    "rt_space",
    "PatchSolveError",
    "ReconstructionMap",
    "build_reconstruction",
    "ConvergenceError",
    "SolverError",
    "solve_navier_stokes",
    "solve_stokes",
    "ExactSolution",
    "preset",
]
