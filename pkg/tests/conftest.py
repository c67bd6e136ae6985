import pytest

from _cmapss_sim import write_condition

from physrul import harness, ingest


@pytest.fixture(scope="session")
def small_data_dir(tmp_path_factory):
    """Quick fixture: 12 short units, single fault mode."""
    d = tmp_path_factory.mktemp("cmapss_small")
    write_condition(d, condition="FD001", n_train=12, n_test=6, min_len=60, max_len=90, seed=7)
    return d


@pytest.fixture(scope="session")
def full_data_dir(tmp_path_factory):
    """Acceptance-scale fixture: FD001 with 100 train units, FD003 bimodal."""
    d = tmp_path_factory.mktemp("cmapss_full")
    write_condition(d, condition="FD001", n_train=100, n_test=50, seed=11)
    write_condition(
        d, condition="FD003", n_train=60, n_test=40,
        min_len=140, max_len=200, seed=13, bimodal=True,
    )
    return d


@pytest.fixture(scope="session")
def small_splits(small_data_dir):
    return ingest.load_condition(small_data_dir, "FD001")


@pytest.fixture(scope="session")
def fd001_splits(full_data_dir):
    return ingest.load_condition(full_data_dir, "FD001")


@pytest.fixture(scope="session")
def fd001_physics(fd001_splits):
    train_ts, _ = fd001_splits
    return harness.estimate_all_physics(train_ts)
