import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

# constructing any optimizer once avoids paying the lazy torch._dynamo
# import inside timed test bodies
torch.optim.Adam([torch.nn.Parameter(torch.zeros(1))])


@pytest.fixture(scope="session")
def fixture_sets():
    from privmass.fixtures import fixture_patches, fixture_synthetic

    return {
        "real_train": fixture_patches(12, seed=0),
        "real_val": fixture_patches(6, seed=1, id_prefix="FXV"),
        "synthetic": fixture_synthetic(12, 12, seed=2),
        "external": fixture_patches(6, seed=3, family="external", id_prefix="FXE"),
    }
