import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "suite",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

# Acceptance tests register one entry per criterion here; the terminal
# summary prints them so every run shows one pass/fail line per criterion.
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        ok, label = ACCEPTANCE_RESULTS[num]
        word = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{word} criterion {num}: {label}")


def permute_field(field, perm):
    """Reorder a field's members without reconstructing them, so the
    parameters stay bitwise identical."""
    from semsplat.field import SemanticGaussianField

    return SemanticGaussianField(
        gaussians=tuple(field.gaussians[i] for i in perm),
        sh_degree=field.sh_degree,
        feature_dim=field.feature_dim,
    )


def central_diff(fn, x, index, h):
    """Central finite difference of scalar fn at x[index]."""
    xp = x.copy()
    xp[index] += h
    xm = x.copy()
    xm[index] -= h
    return (fn(xp) - fn(xm)) / (2.0 * h)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
