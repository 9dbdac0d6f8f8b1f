import numpy as np
import pytest

from sketchmesh import tensor as T
from sketchmesh._kernels import warm_up
from sketchmesh.dataset import build_dataset
from sketchmesh.geometry import Mesh

BOX_FACES = np.array([
    [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
    [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
    [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
], dtype=np.int64)


def box_mesh(center=(0.0, 0.0, 0.0), half=(0.5, 0.5, 0.5)) -> Mesh:
    cx, cy, cz = center
    hx, hy, hz = half
    verts = np.array([[x, y, z]
                      for x in (cx - hx, cx + hx)
                      for y in (cy - hy, cy + hy)
                      for z in (cz - hz, cz + hz)])
    return Mesh(T.Tensor(verts), BOX_FACES.copy())


@pytest.fixture(scope="session", autouse=True)
def compiled_kernels():
    warm_up()


@pytest.fixture(autouse=True)
def fresh_graph():
    T.ACTIVE_GRAPH.reset()
    yield
    T.ACTIVE_GRAPH.reset()


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """8 shapes x 2 poses at 32x32; enough for pipeline/eval/CLI tests."""
    root = tmp_path_factory.mktemp("data32")
    manifest = build_dataset(root, n_shapes=8, poses_per_shape=2,
                             resolution=32, seed=11)
    return root, manifest


@pytest.fixture(scope="session")
def tiny_dataset64(tmp_path_factory):
    root = tmp_path_factory.mktemp("data64")
    manifest = build_dataset(root, n_shapes=4, poses_per_shape=2,
                             resolution=64, seed=5)
    return root, manifest
