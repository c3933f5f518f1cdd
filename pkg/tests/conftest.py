import numpy as np
import pytest

from sparself import synth
from sparself.core import RigidTransform


@pytest.fixture(scope="session")
def camera():
    return synth.DEFAULT_INTRINSICS, synth.default_layout()


@pytest.fixture(scope="session")
def dolly_pair(camera):
    """Plane at 0.5 m, 5 mm x-translation between frames."""
    k, layout = camera
    return synth.render_pair(synth.plane_scene(0.5, seed=3), k, layout, RigidTransform.identity(),
                             RigidTransform.from_translation(0.005, 0.0, 0.0))


@pytest.fixture(scope="session")
def general_pair(camera):
    """Plane at 0.6 m under a small general motion."""
    from sparself.core import se3_exp
    k, layout = camera
    motion = se3_exp([0.003, -0.002, 0.004, 0.002, -0.003, 0.004])
    return synth.render_pair(synth.plane_scene(0.6, seed=11), k, layout, RigidTransform.identity(), motion)


def random_transform(rng, scale=1.0):
    from sparself.core import se3_exp
    return se3_exp(np.concatenate([scale * rng.normal(size=3), rng.normal(size=3)]))
