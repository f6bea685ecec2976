import warnings

import pytest

from apkam.fixtures import default_context, intro_map, single_mode_map


@pytest.fixture(scope="session")
def ctx():
    return default_context(seed=0)


@pytest.fixture(scope="session")
def intro(ctx):
    return intro_map(ctx, eps=1e-6)


@pytest.fixture(scope="session")
def single(ctx):
    return single_mode_map(ctx, eps=1e-6)


@pytest.fixture(scope="session")
def kam_curve(ctx, intro):
    """One converged practical-mode run shared by every consumer."""
    from apkam.kam import kam_iterate
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return kam_iterate(intro, ctx, mode="practical", tol_conj=1e-10,
                           max_stage=8)


@pytest.fixture
def announce(capsys):
    """Print a visible pass/fail line even under pytest capture."""
    def _announce(text):
        with capsys.disabled():
            print(text)
    return _announce
