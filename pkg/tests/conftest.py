import numpy as np
import pytest
from hypothesis import settings

from madrs_speech.dataset import Recording

settings.register_profile("dev", max_examples=25, deadline=None)
settings.load_profile("dev")


def make_recording(idx: int, scores=None, speaker=None, **kwargs) -> Recording:
    scores = tuple(scores) if scores is not None else (2, 2, 1, 0, 0, 1, 2, 2, 2, 4)
    return Recording(
        recording_id=f"rec{idx:04d}",
        speaker_id=speaker or f"spk{idx:04d}",
        symptom_scores=scores,
        madrs_total=sum(scores),
        **kwargs,
    )


@pytest.fixture
def tiny_recordings():
    rng = np.random.default_rng(0)
    recs = []
    for i in range(12):
        present = rng.random(10) < 0.5
        scores = tuple(
            int(rng.integers(2, 7)) if p else int(rng.integers(0, 2)) for p in present
        )
        recs.append(make_recording(i, scores=scores))
    return recs
