import pytest

from mrtamp.world import Kind, ObjectDisc, assemble

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def disc(oid, x, y, r=0.03, kind=Kind.CLUTTER):
    return ObjectDisc(oid, (x, y), r, kind)


def target(oid, x, y, r=0.03):
    return ObjectDisc(oid, (x, y), r, Kind.TARGET)


@pytest.fixture
def make_world():
    def build(objects, robots=1, seed=0):
        return assemble(objects, robots, seed)

    return build


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
