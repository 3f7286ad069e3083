import pytest

from fedspectre.synth import SyntheticSpec, default_spec_tree, synthesize


@pytest.fixture(scope="session")
def small_data():
    """Synthetic table big enough for 4 shards of 30/5/5 per behavior."""
    tree = default_spec_tree()
    tree["counts"] = {"default": 200}
    return synthesize(SyntheticSpec.from_dict(tree), 0)


@pytest.fixture
def small_scenario():
    from fedspectre.scenarios import builtin_scenario

    def make(scenario_id="S1_anomaly_balanced", **fed):
        cfg = builtin_scenario(scenario_id, seed=0)
        cfg.quotas = {"train": 30, "val": 5, "test": 5}
        cfg.federation.rounds = 2
        cfg.federation.local_epochs = 1
        cfg.federation.batch_size = 16
        for k, v in fed.items():
            setattr(cfg.federation, k, v)
        return cfg

    return make


ACCEPTANCE = {}


@pytest.fixture
def record():
    """Store a criterion verdict for the summary printed at the end of the run.

    ``ok=None`` marks a skipped criterion.
    """

    def _record(criterion, ok, detail):
        ACCEPTANCE[criterion] = ("SKIP" if ok is None else "PASS" if ok else "FAIL", detail)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split()[0].rstrip("abc")), k)):
        verdict, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{verdict} criterion {key}: {detail}")
