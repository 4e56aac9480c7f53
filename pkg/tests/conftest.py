import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from p3m.backbone import EncoderConfig
from p3m.p3mnet import P3MNetConfig, build_p3mnet
from p3m.synthetic import make_portrait_sample, write_dataset_tree, write_source_library


def pytest_runtest_logreport(report):
    # One visible pass/fail line per acceptance criterion.
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        print(f"\n[ACCEPTANCE] {name}: {report.outcome.upper()}")


@pytest.fixture(scope="session")
def toy_encoder_cfg():
    return EncoderConfig.preset("resnet34", scale=0.25)


@pytest.fixture(scope="session")
def toy_net_cfg(toy_encoder_cfg):
    return P3MNetConfig(encoder=toy_encoder_cfg)


@pytest.fixture(scope="session")
def toy_model(toy_net_cfg):
    return build_p3mnet(toy_net_cfg, rng_seed=7)


@pytest.fixture(scope="session")
def portrait_samples():
    return [make_portrait_sample(seed=100 + i, size=64) for i in range(8)]


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def dataset_tree(tmp_path_factory):
    root = tmp_path_factory.mktemp("toyset")
    write_dataset_tree(root, n=6, size=64, seed=3)
    return root


@pytest.fixture(scope="session")
def source_library_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("sources")
    write_source_library(root, n=4, size=64, seed=9)
    return root
