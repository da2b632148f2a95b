import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gres.hierarchizer import PrototypeScores, rank_and_rearrange
from gres.predictor import (
    Decision,
    EmbeddingHead,
    MaskDecoder,
    assemble_triphasic,
    decide,
    decide_from_distances,
    decode_mask,
    embed_group_features,
    emit_mask,
    split_triphasic,
)
from gres.config import RunConfig

from oracles import check_gradients, matvec_loop

pytestmark = pytest.mark.usefixtures("float64")


def test_triphasic_channel_count_and_layout():
    V, Ml, maps = torch.randn(4, 2, 2), torch.randn(2, 2), torch.randn(2, 2, 2)
    z = assemble_triphasic(V, Ml, maps)
    assert z.shape == (7, 2, 2)
    assert torch.equal(z[:4], V)
    assert torch.equal(z[4], Ml)
    assert torch.equal(z[5:], maps)


def test_triphasic_round_trip_from_ranked_stack():
    V, Ml = torch.randn(3, 5, 4, 4), torch.randn(3, 4, 4)
    maps = torch.randn(3, 3, 4, 4)
    stack = rank_and_rearrange(maps, PrototypeScores(torch.rand(3), torch.rand(3)), "pos_plus_neg")
    z = assemble_triphasic(V, Ml, stack)
    V2, Ml2, maps2 = split_triphasic(z, 5)
    assert torch.equal(V2, V) and torch.equal(Ml2, Ml) and torch.equal(maps2, stack.maps)


def test_triphasic_tail_follows_map_permutation():
    V, Ml, maps = torch.randn(2, 3, 3), torch.randn(3, 3), torch.randn(3, 3, 3)
    perm = torch.tensor([2, 0, 1])
    assert torch.equal(assemble_triphasic(V, Ml, maps[perm])[3:], assemble_triphasic(V, Ml, maps)[3:][perm])


def test_triphasic_without_vision_maps():
    z = assemble_triphasic(torch.randn(4, 2, 2), torch.randn(2, 2), None)
    assert z.shape == (5, 2, 2)


def test_triphasic_shape_mismatch():
    with pytest.raises(ValueError):
        assemble_triphasic(torch.randn(4, 2, 2), torch.randn(3, 3), None)


def test_embedding_of_constant_z():
    head = EmbeddingHead(3, 2)
    c = torch.tensor([1.0, -2.0, 0.5])
    z = c[:, None, None].expand(3, 4, 4)
    assert torch.allclose(embed_group_features(z, head), head.fc(c), atol=1e-14)


def test_embedding_zero_params_gives_bias():
    head = EmbeddingHead(3, 2)
    with torch.no_grad():
        head.fc.weight.zero_()
    assert torch.equal(head(torch.randn(3, 2, 2)), head.fc.bias)


@pytest.mark.parametrize("seed", range(5))
def test_embedding_matches_pool_then_matvec(seed):
    torch.manual_seed(seed)
    head = EmbeddingHead(5, 3)
    z = torch.randn(5, 3, 4)
    pooled = [sum(float(z[c, h, w]) for h in range(3) for w in range(4)) / 12 for c in range(5)]
    ref = matvec_loop(head.fc.weight.detach().numpy(), head.fc.bias.detach().numpy(), pooled)
    assert np.max(np.abs(head(z).detach().numpy() - ref)) <= 1e-6


def test_decide_examples():
    e = torch.zeros(2)
    # d_pos = 0.1, d_neg = 2.0
    dec = decide(e, torch.tensor([0.1, 0.0]), torch.tensor([0.0, 2.0]), m=1.0)
    assert dec.is_positive
    assert dec.d_pos == pytest.approx(0.1) and dec.d_neg == pytest.approx(2.0)
    for m in (0.0, 0.5, 1.0):
        assert not decide(e, torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0]), m=m).is_positive


def test_default_margin_is_one():
    assert RunConfig().m == 1.0


@settings(max_examples=100, deadline=None)
@given(
    d_pos=st.floats(0, 10),
    d_neg=st.floats(0, 10),
    delta=st.floats(0, 5),
)
def test_decision_monotonicity(d_pos, d_neg, delta):
    base = decide_from_distances(d_pos, d_neg, 1.0)
    assert base.is_positive == (d_pos + 1.0 < d_neg)
    if base.is_positive:
        assert decide_from_distances(d_pos, d_neg + delta, 1.0).is_positive
    else:
        assert not decide_from_distances(d_pos + delta, d_neg, 1.0).is_positive


def test_negative_decision_emits_zero_mask():
    logits = torch.full((8, 8), 5.0)
    mask = emit_mask(logits, Decision(False, 3.0, 0.0))
    assert mask.dtype == torch.uint8 and not mask.any()
    assert emit_mask(logits, Decision(True, 0.0, 3.0)).all()


def test_decoder_output_shape_and_determinism():
    torch.manual_seed(0)
    dec = MaskDecoder(7)
    z = torch.randn(7, 4, 5)
    out = decode_mask(z, dec)
    assert out.shape == (16, 20)
    assert torch.equal(out, decode_mask(z, dec))
    assert dec(torch.randn(3, 7, 4, 4)).shape == (3, 16, 16)


def test_decoder_gain_scales_heatmap_channels_only():
    dec = MaskDecoder(5, heatmap_channels=2, gain=10.0)
    z = torch.randn(1, 5, 2, 2)
    scaled = dec.gain(z)
    assert torch.equal(scaled[:, :3], z[:, :3])
    assert torch.allclose(scaled[:, 3:], 10 * z[:, 3:], atol=1e-12)
    with pytest.raises(ValueError):
        MaskDecoder(3, heatmap_channels=4)


def test_decoder_gradient_check():
    torch.manual_seed(0)
    dec = MaskDecoder(4, width=4, heatmap_channels=2, gain=3.0)
    z = torch.randn(4, 4, 4, requires_grad=True)
    target = (torch.rand(16, 16) > 0.5).double()
    weights = torch.randn(16, 16)

    def fn():
        return (decode_mask(z, dec) * weights).sum() + 0 * target.sum()

    params = [z] + list(dec.parameters())
    assert check_gradients(fn, params) <= 1e-4
