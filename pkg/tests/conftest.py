import numpy as np
import pytest

from fbmatch.distance import MatchParams
from fbmatch.matching import AtrousSpec


def random_instance(rng: np.random.Generator, max_hw: int = 16, max_c: int = 8, max_objects: int = 3,
                    windows_pool=(1, 2, 3), factors=(1, 2)):
    """One random matching problem from the family used by the equivalence checks."""
    h = int(rng.integers(1, max_hw + 1))
    w = int(rng.integers(1, max_hw + 1))
    c = int(rng.integers(1, max_c + 1))
    scale = float(rng.choice([0.1, 0.3, 1.0]))
    embed = lambda: (rng.standard_normal((h, w, c)) * scale).astype(np.float32)
    n_obj = int(rng.integers(1, max_objects + 1))
    # ids need not be contiguous
    ids = np.sort(rng.choice(np.arange(1, 9), size=n_obj, replace=False))
    labels = np.concatenate([[0], ids])
    mask = lambda: labels[rng.integers(0, n_obj + 1, size=(h, w))].astype(np.uint16)
    k = int(rng.integers(1, len(windows_pool) + 1))
    windows = tuple(sorted(rng.choice(windows_pool, size=k, replace=False).tolist()))
    factor = int(rng.choice(factors))
    return {
        "cur": embed(), "ref": embed(), "ref_mask": mask(), "prev": embed(), "prev_mask": mask(),
        "objects": [int(o) for o in ids], "windows": windows,
        "params": MatchParams(float(rng.uniform(-2, 2)), float(rng.uniform(-2, 2))),
        "atrous": AtrousSpec(factor, int(rng.integers(0, factor))),
    }


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: dict[str, tuple[str, str]] = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion, ok, detail)``; lines are printed in the terminal summary."""

    def record(criterion: str, ok: bool, detail: str = "") -> bool:
        _ACCEPTANCE[criterion] = ("PASS" if ok else "FAIL", detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: (int(k.split()[0]), k)):
        status, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"{status}  {key}: {detail}")
