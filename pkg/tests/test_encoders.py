import numpy as np
import pytest
import torch

from gres.dataset import NO_TOKEN, UNK_TOKEN
from gres.encoders import ImageEncoder, TextEncoder, encode_image, encode_text, make_anti

from oracles import check_gradients

VOCAB = ["<no>", "<unk>", "blue", "circle", "red", "square"]


def test_make_anti_prefixes_once():
    assert make_anti(["red", "circle"]) == [NO_TOKEN, "red", "circle"]
    assert make_anti(["x"])[1:] == ["x"]
    with pytest.raises(ValueError):
        make_anti([])


def test_text_encoder_shape_and_unknown_tokens():
    torch.manual_seed(0)
    enc = TextEncoder(VOCAB, C_l=64)
    out = encode_text(["red", "circle"], enc)
    assert out.shape == (64,)
    assert torch.equal(enc(["zebra"]), enc([UNK_TOKEN]))
    with pytest.raises(ValueError):
        enc([])


def test_text_encoder_adds_reserved_tokens():
    enc = TextEncoder(["a", "b"])
    assert NO_TOKEN in enc.index and UNK_TOKEN in enc.index


def test_text_encoder_order_invariant_mean_pooling():
    torch.manual_seed(1)
    enc = TextEncoder(VOCAB)
    assert torch.allclose(enc(["red", "circle"]), enc(["circle", "red"]), atol=1e-6)
    assert not torch.allclose(enc(["red", "circle"]), enc(make_anti(["red", "circle"])))


def test_image_encoder_shape():
    torch.manual_seed(0)
    enc = ImageEncoder(C_v=64)
    px = np.random.default_rng(0).integers(0, 256, (64, 64, 3), dtype=np.uint8)
    assert encode_image(px, enc).shape == (64, 16, 16)


def test_image_encoder_stride_error():
    enc = ImageEncoder(C_v=8, width=4)
    with pytest.raises(ValueError, match="divisible"):
        enc(torch.zeros(1, 3, 30, 32))


def test_image_encoder_translation_covariance():
    # shifting the input by one stride shifts the interior of the feature map by one cell
    torch.manual_seed(0)
    enc = ImageEncoder(C_v=8, width=8).double()
    x = torch.zeros(1, 3, 96, 96, dtype=torch.float64)
    x[..., 40:52, 40:52] = torch.rand(3, 12, 12, dtype=torch.float64)
    shifted = torch.roll(x, shifts=(4, 4), dims=(-2, -1))
    a, b = enc(x)[0], enc(shifted)[0]
    # stay clear of the zero-padded border
    assert torch.allclose(a[:, 6:17, 6:17], b[:, 7:18, 7:18], atol=1e-10)


def test_text_gradient_matches_finite_differences(float64):
    torch.manual_seed(0)
    enc = TextEncoder(VOCAB, C_l=6, hidden=5).double()
    w = torch.randn(6, dtype=torch.float64)
    fn = lambda: (enc(["red", "square", "zebra"]) * w).sum()
    assert check_gradients(fn, list(enc.parameters())) <= 1e-4


def test_image_gradient_matches_finite_differences(float64):
    torch.manual_seed(0)
    enc = ImageEncoder(C_v=4, width=3).double()
    x = torch.rand(1, 3, 8, 8, dtype=torch.float64, requires_grad=True)
    w = torch.randn(1, 4, 2, 2, dtype=torch.float64)
    fn = lambda: (enc(x) * w).sum()
    assert check_gradients(fn, [x] + list(enc.parameters())) <= 1e-4
