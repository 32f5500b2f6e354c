"""Shared fixtures for the sapa-upsample tests."""

import numpy as np
import pytest

from sapa_upsample.services.tensor_io import write_tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tensor_files(tmp_path, rng):
    """Write a small decoder/encoder pair and return their paths."""

    def make(c=3, h=4, w=4, c_enc=None, ratio=2, dtype=np.float32):
        decoder = rng.standard_normal((1, c, h, w)).astype(dtype)
        encoder = rng.standard_normal((1, c if c_enc is None else c_enc, h * ratio, w * ratio)).astype(dtype)
        dec_path, enc_path = tmp_path / "decoder.sapt", tmp_path / "encoder.sapt"
        write_tensor(dec_path, decoder)
        write_tensor(enc_path, encoder)
        return dec_path, enc_path, decoder, encoder

    return make
