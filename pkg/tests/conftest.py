from pathlib import Path

import numpy as np
import pytest

from patchmix.core import LabelSpace, PointCloud, save_cloud


def synthetic_cloud(n, label, num_classes, seed, cid=None):
    rng = np.random.default_rng(seed)
    # loose class-dependent shapes so scores/assignments are non-trivial
    base = rng.normal(size=(n, 3))
    base[:, label % 3] *= 1.0 + label
    return PointCloud(base.astype(np.float32), label=label, id=cid,
                      label_space=LabelSpace(num_classes))


def write_dataset(directory: Path, n_samples: int, n_points: int,
                  num_classes: int = 4, seed: int = 0) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n_samples):
        cloud = synthetic_cloud(n_points, i % num_classes, num_classes, seed + i,
                                cid=f"s{i:03d}")
        path = directory / f"s{i:03d}.ppmx"
        save_cloud(cloud, path)
        paths.append(path)
    return paths


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture
def dataset_dir(tmp_path):
    d = tmp_path / "data"
    write_dataset(d, 6, 128, num_classes=4, seed=10)
    return d
