import os
from pathlib import Path

import pytest
from hypothesis import settings

settings.register_profile("repo", deadline=None, max_examples=60)
settings.load_profile("repo")

MNIST_DIR = Path(os.environ.get("RAGA_MNIST_DIR", Path(__file__).resolve().parents[2] / "data" / "mnist"))
MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


@pytest.fixture(scope="session")
def mnist_dir():
    if not all((MNIST_DIR / f).exists() for f in MNIST_FILES):
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR} (set RAGA_MNIST_DIR)")
    return MNIST_DIR


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record a criterion's one-line verdict; lines are printed in the session summary."""

    def report(number: int, passed: bool, detail: str):
        line = f"acceptance {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
