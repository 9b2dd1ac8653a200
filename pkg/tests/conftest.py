import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_command(name: str) -> list[str]:
    """Command line running one of the DNZ1 test doubles."""
    return [sys.executable, str(FIXTURES / name)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_complex(rng):
    def make(*shape):
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return make
