import numpy as np
import pytest

from csi_codelearn.data import LabelMap, SpectralCube


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def blocky_labels(counts, width=10):
    """Label map with ``counts[c]`` pixels of class c, padded with background."""
    flat = np.concatenate([np.full(n, c) for c, n in enumerate(counts)])
    rows = int(np.ceil(flat.size / width)) + 1
    lab = np.full(rows * width, -1)
    lab[:flat.size] = flat
    return LabelMap(lab.reshape(rows, width), len(counts))


def random_cube(rng, M=8, N=8, L=16):
    return SpectralCube(rng.random((M, N, L)))


# acceptance outcomes, printed once more at the end of the run
ACCEPTANCE: list[tuple[str, str, str]] = []


def record(criterion: str, ok: bool | None, detail: str) -> None:
    status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    ACCEPTANCE.append((criterion, status, detail))
    print(f"\n{criterion} {status}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, status, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{criterion} {status}: {detail}")
