import pytest

import samples


@pytest.fixture
def invite_raw() -> bytes:
    return samples.sample_invite()


@pytest.fixture
def answer_raw() -> bytes:
    return samples.sample_answer()
