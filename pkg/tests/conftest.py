import pytest

from compvi.diagram import OpenMdp, StringDiagram, seq
from compvi.mdp import Mdp, NumericMode


def make_a():
    mdp = Mdp.build(
        ["enr1", "s1", "s2", "exr1", "exl1", "enl1"],
        [
            ("enr1", "go", [("s1", "1")]),
            ("s1", "a", [("exr1", "1/2"), ("s2", "1/2")]),
            ("s1", "b", [("s2", "1")]),
            ("s2", "go", [("exl1", "1")]),
            ("enl1", "go", [("s2", "3/10"), ("exr1", "7/10")]),
        ],
        NumericMode.EXACT,
    )
    return OpenMdp(mdp, ["enr1"], ["enl1"], ["exr1"], ["exl1"])


def make_b():
    mdp = Mdp.build(
        ["enr1", "t1", "exr1", "exl1"],
        [
            ("enr1", "go", [("exr1", "7/10"), ("t1", "3/10")]),
            ("t1", "go", [("exl1", "1")]),
        ],
        NumericMode.EXACT,
    )
    return OpenMdp(mdp, ["enr1"], [], ["exr1"], ["exl1"])


@pytest.fixture
def leaf_a():
    return make_a()


@pytest.fixture
def leaf_b():
    return make_b()


@pytest.fixture
def loop_ab():
    """A ⨟ B: B's left exit loops back into A."""
    return StringDiagram(seq("A", "B"), {"A": make_a(), "B": make_b()})


# acceptance lines, printed in the terminal summary
ACCEPTANCE = {}


def record(criterion: int, ok: bool, detail: str):
    ACCEPTANCE[criterion] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
