import importlib

import numpy as np
import pytest


def _backends():
    mods = [importlib.import_module("fogdet._kernels_py")]
    try:
        mods.append(importlib.import_module("fogdet._kernels"))
    except ImportError:
        pass
    return mods


@pytest.fixture(params=_backends(), ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def kern(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report one line each at the end of the session
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    def report(key: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE[key] = (bool(ok), detail)
        return bool(ok)
    return report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}: {detail}")
