import gzip
import os

import pytest

# acceptance criterion number -> (passed, detail)
ACCEPTANCE = {}


def record(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def digits_path(tmp_path_factory):
    """The 1797-sample optdigits file.

    Uses $IDCL_DIGITS if set, otherwise extracts the copy bundled with
    scikit-learn (same UCI format: 64 pixel counts then the class id).
    """
    env = os.environ.get("IDCL_DIGITS")
    if env:
        return env
    try:
        from importlib.resources import files
        src = files("sklearn.datasets").joinpath("data", "digits.csv.gz")
        raw = gzip.decompress(src.read_bytes())
    except Exception as exc:  # pragma: no cover - depends on the environment
        pytest.skip(f"no optdigits file available: {exc}")
    out = tmp_path_factory.mktemp("digits") / "optdigits.csv"
    out.write_bytes(raw)
    return str(out)
