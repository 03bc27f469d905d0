import logging

import pytest

from handsign.synth import SynthSpec, generate


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Shared tiny corpus: 4 signs, 3 subjects, 8 shape classes, 2 reps."""
    spec = SynthSpec(
        num_sign_classes=4,
        num_subjects=3,
        num_handshape_classes=8,
        frames_per_video=20,
        reps_per_sign=2,
        patch_size=32,
        seed=11,
    )
    root = tmp_path_factory.mktemp("corpus")
    return generate(spec, root / "data")


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.WARNING)
    yield
