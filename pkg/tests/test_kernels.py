import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hieronst import _fallback, kernels
from _oracles import bilinear_oracle

compiled = pytest.importorskip("hieronst._ckernels")


def _image(seed, h, w, c):
    return np.random.default_rng(seed).random((h, w, c), dtype=np.float32)


@given(st.integers(0, 10**6), st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 3]),
       st.integers(1, 12), st.integers(1, 12))
def test_resize_backends_agree(seed, h, w, c, oh, ow):
    img = _image(seed, h, w, c)
    a = compiled.resize_bilinear(img, oh, ow)
    b = _fallback.resize_bilinear(img, oh, ow)
    assert a.shape == b.shape == (oh, ow, c)
    np.testing.assert_allclose(a, b, atol=1e-6)


@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(1, 6), st.integers(1, 7), st.integers(1, 7))
def test_resize_matches_pixel_oracle(seed, h, w, oh, ow):
    img = _image(seed, h, w, 2)
    np.testing.assert_allclose(kernels.resize_bilinear(img, oh, ow), bilinear_oracle(img, oh, ow), atol=1e-5)


def test_resize_same_size_is_identity():
    img = _image(0, 7, 5, 3)
    np.testing.assert_array_equal(kernels.resize_bilinear(img, 7, 5), img)


@given(st.integers(0, 10**6), st.floats(-3, 3), st.floats(-3, 3), st.floats(-0.5, 0.5),
       st.floats(0.7, 1.3), st.booleans(), st.floats(0, 1))
def test_warp_backends_agree(seed, tx, ty, angle, zoom, edge, fill):
    img = _image(seed, 8, 11, 3)
    cos, sin = np.cos(angle) / zoom, np.sin(angle) / zoom
    m = np.array([[cos, sin, tx], [-sin, cos, ty]])
    a = compiled.warp_affine(img, m, fill, edge)
    b = _fallback.warp_affine(img, m, fill, edge)
    np.testing.assert_allclose(a, b, atol=1e-5)


def test_warp_identity_and_fill():
    img = _image(3, 6, 6, 1)
    ident = np.array([[1.0, 0, 0], [0, 1.0, 0]])
    np.testing.assert_allclose(kernels.warp_affine(img, ident, 0.5, False), img, atol=1e-6)
    far = np.array([[1.0, 0, 100], [0, 1.0, 0]])
    assert np.all(kernels.warp_affine(img, far, 0.25, False) == np.float32(0.25))
    # edge mode repeats the last column instead
    np.testing.assert_allclose(kernels.warp_affine(img, far, 0.25, True)[:, 0, 0], img[:, -1, 0], atol=1e-6)


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), max_size=60))
def test_confusion_backends_agree(pairs):
    t = np.array([a for a, _ in pairs], dtype=np.int64)
    p = np.array([b for _, b in pairs], dtype=np.int64)
    a = compiled.confusion_counts(t, p, 5)
    b = _fallback.confusion_counts(t, p, 5)
    np.testing.assert_array_equal(a, b)
    assert a.sum() == len(pairs)


@pytest.mark.parametrize("impl", [compiled, _fallback])
def test_confusion_rejects_out_of_range(impl):
    with pytest.raises(IndexError):
        impl.confusion_counts(np.array([0, 3]), np.array([0, 0]), 3)


def test_backend_selection_env():
    code = "from hieronst import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, HIERONST_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    env.pop("HIERONST_PURE_PYTHON")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "cython"
