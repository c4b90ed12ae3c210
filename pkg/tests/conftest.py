import pytest


def pytest_addoption(parser):
    parser.addoption(
        "--runslow",
        action="store_true",
        default=False,
        help="run the desk-scale training suite (hours on a laptop-class box)",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="slow training suite; pass --runslow to enable")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
