import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from dsp.diffusion import make_vp_schedule
from dsp.policy import PolicyConfig, build_policy


@pytest.fixture
def schedule():
    return make_vp_schedule()


@pytest.fixture
def tiny_policy():
    return build_policy(PolicyConfig(obs_dim=13, act_dim=4, hidden_dim=8, embed_dim=4, T=5, seed=7))
