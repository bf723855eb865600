import pytest

from cusp_response.function_space import NormConfig
from cusp_response.map_family import CuspTentFamily
from cusp_response.transfer_operator import make_context


@pytest.fixture(scope="session")
def model0():
    return CuspTentFamily(k=4, eps=0.0, p=1.5)


@pytest.fixture(scope="session")
def cfg():
    return NormConfig(p=1.5)


@pytest.fixture(scope="session")
def ctx0(model0, cfg):
    """Coarse operator context, enough for identities that hold at any resolution."""
    return make_context(model0, 512, cfg=cfg)


@pytest.fixture(scope="session")
def ctx_eps(model0, cfg):
    return make_context(model0.with_eps(0.05), 512, cfg=cfg)


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
