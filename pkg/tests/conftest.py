import pytest

from georom.config import RunConfig

SMALL = dict(n_samples=14, n_train=12, n_val=0, n_test=2, max_iters=40, min_reduction=0.9)


@pytest.fixture(scope="session")
def small_cfg():
    return RunConfig(**SMALL)


@pytest.fixture(scope="session")
def small_trained(small_cfg, tmp_path_factory):
    from georom import pipeline as pl
    out = tmp_path_factory.mktemp("small_run")
    ref = pl.build_reference(small_cfg)
    model, results, timings = pl.offline_train(small_cfg, out, ref)
    return dict(cfg=small_cfg, out=out, ref=ref, model=model, results=results, timings=timings,
                params=pl.sample_parameters(small_cfg))


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""
    def record(n, ok, detail):
        line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line, flush=True)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
