import os
import struct

import numpy as np
import pytest

from gfkqmc import system as S
from gfkqmc import trial as T
from gfkqmc import walk as W
from gfkqmc.checkpoint import MAGIC, VERSION, read_checkpoint
from gfkqmc.exceptions import ConfigError


@pytest.fixture
def setup():
    spec = S.h2_plus(2.0)
    trial = T.AtomicProductTrial(spec, 1.24)
    params = W.WalkParams(n=10, t_max=2.0, horizons=[1.0, 2.0], n_rep=60, seed=21, chunk_size=16)
    return spec, trial, params


def assert_same(a, b):
    np.testing.assert_array_equal(a.log_weights, b.log_weights)
    np.testing.assert_array_equal(a.aborted, b.aborted)
    np.testing.assert_array_equal(a.singular_hits, b.singular_hits)
    assert a.properties.keys() == b.properties.keys()
    for k in a.properties:
        np.testing.assert_array_equal(a.properties[k], b.properties[k])


def test_checkpointed_run_matches_plain_run(setup, tmp_path):
    spec, trial, params = setup
    plain = W.run_ensemble(spec, trial, params, lambda_T=-0.6)
    ck = W.run_ensemble(spec, trial, params, lambda_T=-0.6, checkpoint=str(tmp_path / "a.ckpt"))
    assert_same(plain, ck)


def test_header_layout(setup, tmp_path):
    spec, trial, params = setup
    path = tmp_path / "a.ckpt"
    W.run_ensemble(spec, trial, params, lambda_T=-0.6, checkpoint=str(path))
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    version, seed = struct.unpack_from("<IQ", raw, 8)
    assert (version, seed) == (VERSION, 21)
    header, records = read_checkpoint(str(path))
    np.testing.assert_array_equal(header["horizons"], [1.0, 2.0])
    assert len(records) == params.n_rep
    assert sorted(records["path"]) == list(range(params.n_rep))


@pytest.mark.parametrize("keep_fraction", [0.0, 0.3, 0.55, 0.999])
def test_resume_after_truncation_is_identical(setup, tmp_path, keep_fraction):
    spec, trial, params = setup
    path = tmp_path / "a.ckpt"
    full = W.run_ensemble(spec, trial, params, lambda_T=-0.6, checkpoint=str(path))
    size = os.path.getsize(path)
    with open(path, "r+b") as fh:
        fh.truncate(int(size * keep_fraction))
    if keep_fraction == 0.0:
        path.write_bytes(b"")
    resumed = W.run_ensemble(spec, trial, params, lambda_T=-0.6, checkpoint=str(path))
    assert_same(full, resumed)
    assert os.path.getsize(path) == size


def test_resume_skips_completed_work(setup, tmp_path, monkeypatch):
    spec, trial, params = setup
    path = tmp_path / "a.ckpt"
    W.run_ensemble(spec, trial, params, lambda_T=-0.6, checkpoint=str(path))
    calls = []
    original = W._chunk_task
    monkeypatch.setattr(W, "_chunk_task", lambda task: calls.append(task) or original(task))
    W.run_ensemble(spec, trial, params, lambda_T=-0.6, checkpoint=str(path))
    assert calls == []


def test_mismatched_run_rejected(setup, tmp_path):
    spec, trial, params = setup
    path = tmp_path / "a.ckpt"
    W.run_ensemble(spec, trial, params, lambda_T=-0.6, checkpoint=str(path))
    with pytest.raises(ConfigError) as info:
        W.run_ensemble(spec, trial, params, lambda_T=-0.7, checkpoint=str(path))
    assert info.value.key == "checkpoint"
    other = W.WalkParams(n=10, t_max=2.0, horizons=[1.0, 2.0], n_rep=60, seed=22, chunk_size=16)
    with pytest.raises(ConfigError):
        W.run_ensemble(spec, trial, other, lambda_T=-0.6, checkpoint=str(path))


def test_not_a_checkpoint(setup, tmp_path):
    spec, trial, params = setup
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"hello world, not a checkpoint")
    with pytest.raises(ConfigError):
        W.run_ensemble(spec, trial, params, lambda_T=-0.6, checkpoint=str(path))
