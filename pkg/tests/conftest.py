import os
import sys

sys.path.insert(0, os.path.dirname(__file__))


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")
    import helpers

    helpers.PYTEST_CONFIG = config


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(mod.RESULTS):
        checks = mod.RESULTS[crit]
        failed = [name for name, ok, _ in checks if not ok]
        flag = "FAIL" if failed else "PASS"
        note = f"{len(checks) - len(failed)}/{len(checks)} checks"
        if failed:
            note += "; failed: " + "; ".join(failed)
        terminalreporter.write_line(f"{flag}  criterion {crit} {mod.TITLES[crit]}: {note}")
