import pytest

from resdiag.dataset import build_balanced_dataset, write_manifest

SMALL_SEED = 11
SMALL_MC_SETS = 100


@pytest.fixture(scope="session")
def small_examples():
    """One example per bucket, with a cheap Monte-Carlo budget."""
    return build_balanced_dataset(50, m=SMALL_MC_SETS, seed=SMALL_SEED)


@pytest.fixture(scope="session")
def small_dataset_dir(small_examples, tmp_path_factory):
    out = tmp_path_factory.mktemp("small_dataset")
    write_manifest(small_examples, out)
    return out


# -- acceptance criteria report -------------------------------------------------------

_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): test that decides one acceptance criterion")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    name = mark.args[0]
    if call.excinfo is None:
        if call.when == "call":
            _CRITERIA.setdefault(name, ("PASS", ""))
        return
    if call.excinfo.errisinstance(pytest.skip.Exception):
        _CRITERIA[name] = ("SKIP", str(call.excinfo.value))
        return
    msg = call.excinfo.exconly().splitlines()[0]
    _CRITERIA[name] = ("FAIL", msg[:160])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, detail) in _CRITERIA.items():
        line = f"{status}  {name}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail and status != "PASS" else ""))
