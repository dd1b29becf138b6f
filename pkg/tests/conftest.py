import pytest

from nitsche_contact.adapt import StudyConfig, run_study


@pytest.fixture(scope="session")
def pressing_studies():
    """The four convergence studies of the squeezing load, shared by the
    property tests and the acceptance gate."""
    out = {}
    for mode in ("uniform", "adaptive"):
        for degree in (1, 2):
            cfg = StudyConfig(experiment="pressing", degree=degree, mode=mode,
                              max_dofs=15000)
            out[(mode, degree)] = run_study(cfg)
    return out


@pytest.fixture(scope="session")
def bending_adaptive_p2():
    return run_study(StudyConfig(experiment="bending", degree=2, mode="adaptive",
                                 max_dofs=3000))
