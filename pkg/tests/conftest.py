import pytest

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    Usage: ``with acceptance(3, "trajectory round-trip"): ...``; the line is
    printed immediately and again in the terminal summary.
    """
    lines = request.config.stash[_ACCEPTANCE_KEY]

    class _Criterion:
        def __init__(self, number, title):
            self.number, self.title, self.details = number, title, []

        def note(self, text):
            self.details.append(text)

        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            status = "PASS" if exc_type is None else "FAIL"
            parts = list(self.details)
            if exc is not None:
                msg = str(exc).splitlines()[0] if str(exc) else ""
                parts.append(f"{exc_type.__name__}: {msg}" if msg else exc_type.__name__)
            detail = "; ".join(parts)
            line = f"criterion {self.number} {status}: {self.title}" + (f" ({detail})" if detail else "")
            print(line)
            lines.append(line)
            return False

    return _Criterion


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
