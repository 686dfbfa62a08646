"""Shared toy network builders for the test suite."""
import numpy as np

from grasptrace.layers import CONV, MAXPOOL, LayerSpec
from grasptrace.network import NetworkSpec, WeightSet


def toy_net(seed=0, channels=(4, 5, 6), scale=0.5):
    """Small three-tap stack: conv/pool/conv/conv on 3-channel input."""
    c1, c2, c3 = channels
    net = NetworkSpec((
        LayerSpec(CONV, kernel=3, padding=1, out_channels=c1,
                  name="conv1", tap="conv-1"),
        LayerSpec(MAXPOOL, kernel=2, stride=2, name="pool1"),
        LayerSpec(CONV, kernel=3, padding=1, out_channels=c2,
                  name="conv2", tap="conv-2"),
        LayerSpec(CONV, kernel=3, padding=1, out_channels=c3,
                  name="conv3", tap="conv-3"),
    ))
    rng = np.random.default_rng(seed)
    kernels, biases = {}, {}
    in_c = net.input_channels
    for layer in net.layers:
        if layer.kind != CONV:
            continue
        kernels[layer.name] = rng.normal(
            scale=scale, size=(layer.out_channels, in_c, layer.kernel, layer.kernel))
        biases[layer.name] = rng.normal(scale=0.1, size=layer.out_channels)
        in_c = layer.out_channels
    return net, WeightSet(kernels, biases)


def deep_net(seed=0):
    """Five-tap stack with two pools, shaped like the full desk network."""
    net = NetworkSpec((
        LayerSpec(CONV, kernel=5, padding=2, out_channels=8,
                  name="conv1", tap="conv-1"),
        LayerSpec(MAXPOOL, kernel=2, stride=2, name="pool1"),
        LayerSpec(CONV, kernel=3, padding=1, out_channels=16,
                  name="conv2", tap="conv-2"),
        LayerSpec(MAXPOOL, kernel=2, stride=2, name="pool2"),
        LayerSpec(CONV, kernel=3, padding=1, out_channels=16,
                  name="conv3", tap="conv-3"),
        LayerSpec(CONV, kernel=3, padding=1, out_channels=24,
                  name="conv4", tap="conv-4"),
        LayerSpec(CONV, kernel=3, padding=1, out_channels=24,
                  name="conv5", tap="conv-5"),
    ))
    rng = np.random.default_rng(seed)
    kernels, biases = {}, {}
    in_c = net.input_channels
    for layer in net.layers:
        if layer.kind != CONV:
            continue
        fan_in = in_c * layer.kernel * layer.kernel
        kernels[layer.name] = rng.normal(
            scale=1.0 / np.sqrt(fan_in),
            size=(layer.out_channels, in_c, layer.kernel, layer.kernel))
        biases[layer.name] = rng.normal(scale=0.05, size=layer.out_channels)
        in_c = layer.out_channels
    return net, WeightSet(kernels, biases)


import pytest


@pytest.fixture(scope="session")
def tiny_dataset_root(tmp_path_factory):
    """Small on-disk dataset shared by the IO / pipeline tests."""
    from grasptrace.dataset import generate_dataset

    root = tmp_path_factory.mktemp("tinyset")
    generate_dataset(root, n_instances=4, n_records=2, n_clutter=2, seed=7)
    return root


@pytest.fixture(scope="session")
def tiny_records(tiny_dataset_root):
    from grasptrace.dataset import load_dataset

    return load_dataset(tiny_dataset_root)


@pytest.fixture(scope="session")
def desk_extractor():
    """One extractor for the whole session so trace caches are shared."""
    from grasptrace.grasp import ObservationExtractor
    from grasptrace.weightbank import get_desk_bank

    return ObservationExtractor(*get_desk_bank())
