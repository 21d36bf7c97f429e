import pytest
import torch

from contgan.data import (
    ConditioningMode,
    build_label_tasks,
    build_segmentation_tasks,
    load_mnist,
)
from contgan.networks import NetworkConfig, build_model
from contgan.synth import generate_dataset


@pytest.fixture(scope="session")
def data_dir(tmp_path_factory) -> str:
    d = tmp_path_factory.mktemp("digits")
    generate_dataset(str(d), train_per_class=40, test_per_class=10, seed=0)
    return str(d)


@pytest.fixture(scope="session")
def mnist_train(data_dir):
    return load_mnist(data_dir, "train")


@pytest.fixture(scope="session")
def big_data_dir(tmp_path_factory) -> str:
    d = tmp_path_factory.mktemp("digits-big")
    generate_dataset(str(d), train_per_class=800, test_per_class=100, seed=1)
    return str(d)


@pytest.fixture(scope="session")
def big_train(big_data_dir):
    return load_mnist(big_data_dir, "train")


@pytest.fixture(scope="session")
def gate_classifier(big_train):
    from contgan.data import resize_nearest
    from contgan.evaluation import train_classifier

    images, labels = big_train
    return train_classifier(resize_nearest(images, 64), labels, seed=11)


@pytest.fixture(scope="session")
def seg_sequence(mnist_train):
    x, y = mnist_train
    return build_segmentation_tasks(x, y, seed=0)


@pytest.fixture(scope="session")
def label_sequence(mnist_train):
    x, y = mnist_train
    return build_label_tasks(x, y, seed=0)


@pytest.fixture
def image_cfg():
    return NetworkConfig(latent_dim=8, base_channels=4, image_size=64, cond_channels=3, label_dim=0, out_channels=1)


@pytest.fixture
def label_cfg():
    return NetworkConfig(latent_dim=8, base_channels=4, image_size=64, cond_channels=0, label_dim=10, out_channels=1)


@pytest.fixture
def tiny_cfg():
    return NetworkConfig(latent_dim=2, base_channels=2, image_size=8, cond_channels=3, label_dim=0, out_channels=1)


@pytest.fixture
def image_model(image_cfg):
    return build_model(image_cfg, seed=7)


@pytest.fixture
def label_model(label_cfg):
    return build_model(label_cfg, seed=7)


def make_batch(task, n, seed=0):
    from contgan.data import PairedBatch

    g = torch.Generator().manual_seed(seed)
    idx = torch.randperm(len(task), generator=g)[:n]
    return PairedBatch(
        mode=task.mode,
        conditions=task.conditions[idx],
        targets=task.targets[idx],
        digit_labels=task.digit_labels[idx],
    )
