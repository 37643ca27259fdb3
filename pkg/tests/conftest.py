import sys
from pathlib import Path

import numpy as np
import pytest

# Ensure project root is on sys.path so `import stokes_recon` works
project_root = Path(__file__).resolve().parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

from stokes_recon.mesh import generate_structured  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mesh4():
    return generate_structured(4)


@pytest.fixture(scope="session")
def mesh8():
    return generate_structured(8)
