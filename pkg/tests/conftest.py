import shutil
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture()
def data_dir(tmp_path):
    """Copies of the bundled datasets; keeps reference-optimum cache files
    (written beside the data by design) out of the source tree."""
    for name in ("train1000.libsvm", "test200.libsvm"):
        shutil.copy(FIXTURES / name, tmp_path / name)
    return tmp_path
