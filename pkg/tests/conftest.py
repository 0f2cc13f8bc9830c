import numpy as np
import pytest

from trn_ood.graph import make_graph
from trn_ood.rng import Rng
from trn_ood.synth import make_class_graph


@pytest.fixture
def path_graph():
    """0 - 1 - 2 with simple features."""
    feats = np.eye(3, 4, dtype=np.float32)
    return make_graph(feats, [[0, 1], [1, 2]], [0, 1, 0], 2)


@pytest.fixture
def blob_graph():
    # 42 nodes over 3 classes -> even class sizes, so a full intra-class
    # swap (beta_swap = 1) stays feasible
    return make_class_graph(42, 6, 3, Rng(0, "fixtures/blob"),
                            p_in=0.25, p_out=0.03,
                            with_texts=True, with_years=True)


class FakeRng:
    """Scripted draw source for exercising exact algorithm branches."""

    def __init__(self, integers=(), randoms=()):
        self._ints = list(integers)
        self._floats = list(randoms)

    def integers(self, low, high=None, size=None):
        assert size is None
        return self._ints.pop(0)

    def random(self, size=None):
        assert size is None
        return self._floats.pop(0)


@pytest.fixture
def fake_rng():
    return FakeRng
