import math

import pytest

from ionfringe.chain import TrapConfig, calibrate_axial
from ionfringe.optics import OpticsConfig

_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def trap():
    a, u0 = calibrate_axial([(4.0, 60e3), (900.0, 1044e3)])
    return TrapConfig(calib_a=a, calib_u0=u0)


@pytest.fixture(scope="session")
def optics():
    return OpticsConfig(wavelength=397e-9, theta=math.radians(45.19))


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance" in report.nodeid and name.startswith("test_criterion_"):
        detail = ""
        for key, value in report.user_properties:
            if key == "detail":
                detail = value
        _ACCEPTANCE[name] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        status, detail = _ACCEPTANCE[name]
        number = name.split("_")[2]
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}")
