import os
import time

import pytest

_RESULTS = {}


class Criterion:
    """Records one pass/fail line per acceptance criterion for the terminal summary."""

    def __init__(self, number, title):
        self.number, self.title = number, title
        self.details = []
        _RESULTS[number] = self

    def check(self, ok, detail):
        self.details.append((bool(ok), detail))
        return bool(ok)

    @property
    def passed(self):
        return bool(self.details) and all(ok for ok, _ in self.details)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        detail = "; ".join(d for _, d in self.details) or "not run to completion"
        return f"[{status}] {self.number:>2}. {self.title}: {detail}"

    def assert_all(self):
        failed = [d for ok, d in self.details if not ok]
        assert not failed, f"criterion {self.number} failed: " + "; ".join(failed)


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        terminalreporter.write_line(_RESULTS[n].line())


@pytest.fixture(scope="session")
def corpora_root(tmp_path_factory):
    """Domain corpora, built once per session (or reused from HENLAB_CORPORA)."""
    import corpora
    root = os.environ.get("HENLAB_CORPORA") or str(tmp_path_factory.mktemp("corpora"))
    t0 = time.perf_counter()
    half = corpora.build(os.path.join(root, "half"), scale=1)
    full = corpora.build(os.path.join(root, "full"), domains=("scenes",), scale=2)
    print(f"corpora ready in {time.perf_counter() - t0:.1f}s under {root}")
    return {"half": half, "full": full}
