"""The ten acceptance criteria at full scale; each prints one PASS/FAIL line.

Runtime is several minutes (criteria 3, 4, 8 and 9 dominate).
"""
import pytest

from chaostemp import acceptance


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(acceptance.CRITERIA))
def test_criterion(number, capsys):
    result = acceptance.CRITERIA[number]()
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.summary
