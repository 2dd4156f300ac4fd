import numpy as np
import pytest

from viewsynth.synthetic import SyntheticSceneSpec, generate_synthetic_scene

SMALL_SPEC = SyntheticSceneSpec(name="unit-fixture", n_sources=4, n_heldout=1,
                                width=64, height=64, seed=7)


@pytest.fixture(scope="session")
def small_scene_dir(tmp_path_factory):
    """One 64x64 four-source synthetic scene, generated once per session."""
    out = tmp_path_factory.mktemp("scenes") / "small"
    generate_synthetic_scene(SMALL_SPEC, out)
    return out


@pytest.fixture(scope="session")
def small_scene(small_scene_dir):
    from viewsynth.sceneio import load_scene
    return load_scene(small_scene_dir)
