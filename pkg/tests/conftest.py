import sys


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criterion (slow)")


def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in sys.modules.items()
                if name.rsplit(".", 1)[-1] == "test_acceptance" and hasattr(m, "RESULTS")), None)
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    order = sorted(mod.RESULTS, key=lambda k: int(k[2:]))
    for name in order:
        terminalreporter.write_line(mod.result_line(name))
