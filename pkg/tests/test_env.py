"""Environment distributions and stream determinism."""

import math

import numpy as np
import pytest

from stochpop.env import (
    Constant,
    Discrete,
    EnvSpec,
    Gamma,
    LogNormal,
    Normal,
    Uniform,
    make_stream,
    parse_dist,
    parse_env_spec,
    sample,
    sample_block,
)
from stochpop.errors import ConfigurationError


def test_same_key_gives_identical_draws():
    a = make_stream(42, 0).uniforms(100)
    b = make_stream(42, 0).uniforms(100)
    assert np.array_equal(a, b)


def test_distinct_replicates_differ():
    a = make_stream(42, 0).uniforms(100)
    b = make_stream(42, 1).uniforms(100)
    assert not np.array_equal(a, b)


def test_fresh_stream_resets_counter():
    s = make_stream(42, 0)
    first = s.uniforms(1)[0]
    s.uniforms(1_000_000)
    assert make_stream(42, 0).uniforms(1)[0] == first


def test_batching_does_not_change_the_stream():
    s1 = make_stream(7, 3)
    s2 = make_stream(7, 3)
    chunks = np.concatenate([s1.uniforms(13), s1.uniforms(1), s1.uniforms(86)])
    assert np.array_equal(chunks, s2.uniforms(100))


def test_sample_advances_stream_one_draw_per_coordinate():
    spec = EnvSpec((Constant(2.0), Uniform(0.0, 1.0)))
    s1 = make_stream(1, 0)
    v1 = sample(spec, s1)
    v2 = sample(spec, s1)
    assert v1[0] == 2.0 and v2[0] == 2.0
    block = sample_block(spec, make_stream(1, 0), 2)
    assert np.array_equal(block, np.stack([v1, v2]))


def test_constant_always_exact():
    spec = EnvSpec((Constant(2.0),))
    draws = sample_block(spec, make_stream(5, 2), 1000)
    assert np.all(draws == 2.0)


def test_lognormal_log_mean_lln():
    spec = EnvSpec((LogNormal(0.0, 0.3),))
    draws = sample_block(spec, make_stream(11, 0), 100_000)[:, 0]
    assert abs(np.log(draws).mean()) < 3 * 0.3 / math.sqrt(100_000)


def test_gamma_mean_is_shape_times_scale():
    spec = EnvSpec((Gamma(1.0, 2.0),))
    draws = sample_block(spec, make_stream(12, 0), 100_000)[:, 0]
    se = math.sqrt(1.0) * 2.0 / math.sqrt(100_000)
    assert abs(draws.mean() - 2.0) < 3 * se


@pytest.mark.parametrize(
    "dist,mean,sd",
    [
        (Normal(1.5, 0.7), 1.5, 0.7),
        (LogNormal(0.2, 0.4), math.exp(0.2 + 0.08), math.exp(0.2 + 0.08) * math.sqrt(math.expm1(0.16))),
        (Gamma(2.5, 1.3), 3.25, math.sqrt(2.5) * 1.3),
        (Uniform(-1.0, 3.0), 1.0, 4.0 / math.sqrt(12)),
        (Discrete((0.0, 1.0, 5.0), (0.2, 0.5, 0.3)), 2.0, math.sqrt(0.2 * 4 + 0.5 * 1 + 0.3 * 9)),
    ],
)
def test_moment_sanity_across_seeds(dist, mean, sd):
    # empirical mean within 4 analytic standard errors for almost every seed
    n = 100_000 if not isinstance(dist, Gamma) else 20_000
    misses = 0
    for seed in range(30):
        draws = sample_block(EnvSpec((dist,)), make_stream(seed, 0), n)[:, 0]
        if abs(draws.mean() - mean) > 4 * sd / math.sqrt(n):
            misses += 1
    assert misses <= 1


def test_gamma_supports_shape_below_one():
    spec = EnvSpec((Gamma(0.4, 1.5),))
    draws = sample_block(spec, make_stream(3, 0), 50_000)[:, 0]
    assert np.all(draws > 0)
    se = math.sqrt(0.4) * 1.5 / math.sqrt(50_000)
    assert abs(draws.mean() - 0.6) < 4 * se


def test_discrete_probabilities():
    spec = EnvSpec((Discrete((1.0, 2.0), (0.25, 0.75)),))
    draws = sample_block(spec, make_stream(9, 0), 40_000)[:, 0]
    frac = (draws == 2.0).mean()
    assert abs(frac - 0.75) < 4 * math.sqrt(0.25 * 0.75 / 40_000)


@pytest.mark.parametrize(
    "bad",
    [
        Normal(0.0, 0.0),
        LogNormal(0.0, -1.0),
        Gamma(0.0, 1.0),
        Gamma(1.0, 0.0),
        Uniform(1.0, 1.0),
        Discrete((1.0, 2.0), (0.5, 0.4)),
        Discrete((1.0,), (-1.0,)),
    ],
)
def test_invalid_distributions_rejected(bad):
    with pytest.raises(ConfigurationError):
        EnvSpec((bad,))


def test_parse_dist_accepts_shorthand_and_rejects_unknown():
    assert parse_dist(2.5) == Constant(2.5)
    assert parse_dist({"dist": "normal", "mean": 0.0, "sd": 1.0}) == Normal(0.0, 1.0)
    with pytest.raises(ConfigurationError):
        parse_dist({"dist": "normal", "mean": 0.0})
    with pytest.raises(ConfigurationError):
        parse_dist({"dist": "normal", "mean": 0.0, "sd": 1.0, "bogus": 1})
    with pytest.raises(ConfigurationError):
        parse_dist({"dist": "zeta", "s": 2.0})


def test_parse_env_spec_round_trip():
    spec = parse_env_spec(
        {"coords": [{"dist": "lognormal", "log_mean": 0.0, "log_sd": 0.3}, {"dist": "constant", "value": 1.0}]}
    )
    assert spec.dim == 2
    assert isinstance(spec.coords[0], LogNormal)
    with pytest.raises(ConfigurationError):
        parse_env_spec({"coords": []})
    with pytest.raises(ConfigurationError):
        parse_env_spec({"coordinates": []})
