import numpy as np
import pytest

import accompanist.hmm as hmm

import oracles

# Every posteriors() call made anywhere in the suite is checked against the
# marginalisation identity gamma_t(i) = sum_j xi_t(i, j) for t < T.
IDENTITY_TOL = 1e-9
identity_stats = {"calls": 0, "max_error": 0.0}


def _checked_posteriors(original):
    def wrapper(alpha, beta, params, obs, keep_xi=True, emissions=None):
        post = original(alpha, beta, params, obs, keep_xi=keep_xi, emissions=emissions)
        if post.gamma.shape[0] > 1:
            err = float(np.max(np.abs(post.gamma[:-1] - post.xi_row_sums)))
            if post.xi is not None:
                err = max(err, float(np.max(np.abs(post.gamma[:-1] - post.xi.sum(axis=2)))))
        else:
            err = 0.0
        identity_stats["calls"] += 1
        identity_stats["max_error"] = max(identity_stats["max_error"], err)
        assert err <= IDENTITY_TOL, f"gamma/xi identity violated by {err:.3e}"
        return post

    return wrapper


@pytest.fixture(autouse=True, scope="session")
def posteriors_identity_guard():
    mp = pytest.MonkeyPatch()
    mp.setattr(hmm, "posteriors", _checked_posteriors(hmm.posteriors))
    yield identity_stats
    mp.undo()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if oracles.ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(oracles.ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
    calls, err = identity_stats["calls"], identity_stats["max_error"]
    if calls:
        status = "PASS" if err <= IDENTITY_TOL else "FAIL"
        terminalreporter.write_line(
            f"[{status}] gamma/xi identity over the whole suite: {calls} posteriors calls, "
            f"max |gamma - sum_j xi| = {err:.2e} (tol {IDENTITY_TOL:g})"
        )
