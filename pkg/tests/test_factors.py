import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lqmkv import ArithmeticBrownian, DomainError, GeometricBrownian, OrnsteinUhlenbeck
from lqmkv.factors import factor_from_dict

MODELS = [
    ArithmeticBrownian(1.0, 0.3, 0.5),
    GeometricBrownian(1.0, 0.2, 0.3),
    OrnsteinUhlenbeck(1.0, 2.0, 0.5, 0.4),
]


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.kind)
def test_simulated_moments_match_closed_forms(model):
    rng = np.random.default_rng(1)
    n, dt, steps = 200_000, 0.01, 100
    f = np.full((n, 1), model.x0)
    for i in range(steps):
        f = model.step(i * dt, f, dt, math.sqrt(dt) * rng.standard_normal((n, 1)))
    T = steps * dt
    se = math.sqrt(model.variance(T) / n)
    assert abs(f.mean() - model.mean(T)) < 4 * se + 1e-12
    assert f.var() == pytest.approx(model.variance(T), rel=0.02)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.kind)
def test_round_trip_dict(model):
    again = factor_from_dict(model.to_dict())
    assert type(again) is type(model) and again.to_dict() == model.to_dict()


def test_martingale_flags():
    assert ArithmeticBrownian(1.0, 0.0, 1.0).is_martingale
    assert not ArithmeticBrownian(1.0, 0.1, 1.0).is_martingale
    assert GeometricBrownian(1.0, 0.0, 1.0).is_martingale
    assert not OrnsteinUhlenbeck(1.0, 1.0).is_martingale


def test_bad_inputs():
    with pytest.raises(DomainError):
        OrnsteinUhlenbeck(1.0, 0.0)
    with pytest.raises(DomainError):
        factor_from_dict({"type": "jump", "x0": 1.0})
    with pytest.raises(DomainError):
        ArithmeticBrownian(1.0).conditional_mean(1.0, 0.5, 1.0)


@settings(max_examples=50, deadline=None)
@given(t=st.floats(0, 3), u=st.floats(0, 3), v=st.floats(0, 3), f=st.floats(-5, 5),
       idx=st.integers(0, len(MODELS) - 1))
def test_conditional_mean_tower_property(t, u, v, f, idx):
    # E[E[F_s | F_u] | F_t] = E[F_s | F_t] for t <= u <= s, by affinity in the conditioning value
    model = MODELS[idx]
    t, u, s = sorted((t, u, v))
    inner_at_mean = model.conditional_mean(u, s, model.conditional_mean(t, u, f))
    assert inner_at_mean == pytest.approx(model.conditional_mean(t, s, f), rel=1e-10, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(t=st.floats(0, 5), idx=st.integers(0, len(MODELS) - 1))
def test_conditional_mean_from_start_is_mean(t, idx):
    model = MODELS[idx]
    assert model.conditional_mean(0.0, t, model.x0) == pytest.approx(model.mean(t), rel=1e-12, abs=1e-12)
