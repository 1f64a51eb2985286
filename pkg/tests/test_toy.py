import numpy as np
import pytest

from hardplan import rng as rngmod
from hardplan.mdp import BOTTOM, FeatureKind, dp_solve
from hardplan.toy import realizable_tree


@pytest.mark.parametrize("kind", ["v", "q"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_realizable_tree(kind, seed):
    t = realizable_tree(3, 3, 2, 2.0, rngmod.stream(seed), kind=kind)
    sol = dp_solve(t.mdp)
    assert np.linalg.norm(t.theta) <= 2.0 + 1e-12
    for s in t.mdp.states():
        if kind == "v":
            phi = t.mdp.phi_v(s)
            assert abs(phi @ t.theta - sol.v[s]) < 1e-12
            assert np.linalg.norm(phi) <= 1 + 1e-12
        else:
            for a in range(2):
                phi = t.mdp.phi_q(s, a)
                assert abs(phi @ t.theta - sol.q[(s, a)]) < 1e-12
                assert np.linalg.norm(phi) <= 1 + 1e-12
    assert t.mdp.feature_kind is (FeatureKind.STATE if kind == "v" else FeatureKind.ACTION)


def test_tree_shape():
    t = realizable_tree(2, 3, 2, 1.0, rngmod.stream(0))
    assert len(t.mdp.states()) == 7
    assert all(o.next_state is BOTTOM for o in t.mdp.outcomes((0, 1), 0))


def test_theta_norm_bound():
    with pytest.raises(ValueError):
        realizable_tree(2, 2, 2, 1.0, rngmod.stream(0), theta_norm=2.0)
    with pytest.raises(ValueError):
        realizable_tree(2, 2, 2, 1.0, rngmod.stream(0), kind="x")
