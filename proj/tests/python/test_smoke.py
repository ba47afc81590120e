import math
import os
import subprocess

import numpy as np
import pytest

import lmd


def test_mx_codes_round_trip():
    for fmt, count in (("mxfp6", 64), ("mxfp4", 16)):
        for code in range(count):
            assert lmd.mx.encode(lmd.mx.decode(code, fmt), fmt) == code
    assert lmd.mx.max_value("mxfp6") == 7.5
    assert lmd.mx.max_value("mxfp4") == 6.0
    assert lmd.mx.decode(lmd.mx.encode(5.1, "mxfp4"), "mxfp4") == 6.0


def test_block_quantization():
    scale, codes = lmd.mx.quantize_block([1.0, 2.0, 3.0, 0.1, -7.5], "mxfp6")
    assert scale == 0
    assert codes == [0x08, 0x10, 0x14, 0x01, 0x3F]
    out = lmd.mx.quantize_dequantize([0.3, -0.07, 0.9], "mxfp6")
    assert len(out) == 3
    with pytest.raises(ValueError):
        lmd.mx.quantize_block([1.0], "mxfp8")


def test_bf16():
    assert lmd.mx.round_bf16(1.005859375) == 1.0078125
    assert lmd.mx.round_bf16(1.0 + 2.0**-8) == 1.0


def test_noise_moments():
    sigma = 0.125
    eps = np.asarray(lmd.sample_noise(sigma, 200_000, seed=3))
    assert eps.min() > 0
    se = eps.std() / math.sqrt(eps.size)
    assert abs(eps.mean() - lmd.lognormal_mean(sigma)) < 4 * se
    assert lmd.lognormal_std(sigma) == pytest.approx(math.exp(sigma**2 / 2) * math.sqrt(math.expm1(sigma**2)))
    assert lmd.sample_noise(sigma, 10, seed=3) == lmd.sample_noise(sigma, 10, seed=3)


def test_initialization_identity():
    sigma = 0.125
    for theta0 in (-2.0, -0.3, 0.0, 0.5, 4.0):
        plus, minus = lmd.init_from_default(theta0, sigma)
        assert abs((plus - minus) * math.exp(sigma**2 / 2) - theta0) < 1e-12
    plus, minus = lmd.init_scale_param(sigma)
    assert minus == 0.0
    assert plus * math.exp(sigma**2 / 2) == pytest.approx(1.0)


def test_schedule_and_config():
    assert lmd.lr_schedule(10, 100, 10, 0.005, 0.0) == 0.005
    text = lmd.normalize_config("steps = 7\noptimizer = adamw\n")
    assert "steps = 7" in text
    with pytest.raises(ValueError):
        lmd.normalize_config("steps = -1\n")
    with pytest.raises(ValueError):
        lmd.normalize_config("no_such_key = 1\n")


def test_train_in_process():
    cfg = "model = mlp\nlayers = 2,16,2\nsteps = 30\nlog_interval = 10\n"
    a = lmd.train(cfg)
    b = lmd.train(cfg)
    assert not a["aborted"]
    assert [r["step"] for r in a["records"]] == [0, 10, 20, 30]
    assert a["csv"] == b["csv"]
    assert a["checkpoint"]
    boom = lmd.train("model = mlp\nlayers = 2,16,2\nsteps = 40\noptimizer = mwu\nlr = 500\n")
    assert boom["aborted"]
    assert boom["checkpoint"] == ""


@pytest.mark.skipif("LMD_CLI" not in os.environ, reason="CLI path not provided")
def test_cli_inspect():
    out = subprocess.run(
        [os.environ["LMD_CLI"], "mx-inspect", "--format", "mxfp4", "--values", "1,2,3"],
        capture_output=True, text=True, check=True,
    ).stdout
    assert "format" in out and "scale_exp" in out
