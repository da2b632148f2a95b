import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gres.tqm import (
    LanguageProjection,
    cosine_map,
    extract_prototype,
    language_heatmap,
    project_language,
    vision_heatmaps,
)

from oracles import cosine_loop, matvec_loop, prototype_loop

pytestmark = pytest.mark.usefixtures("float64")


def rand(*shape, seed=0):
    return torch.as_tensor(np.random.default_rng(seed).standard_normal(shape))


# ---------------------------------------------------------------- projection


def test_project_language_zero_params():
    proj = LanguageProjection(5, 3)
    torch.nn.init.zeros_(proj.weight)
    torch.nn.init.zeros_(proj.bias)
    assert torch.equal(project_language(rand(5), proj), torch.zeros(3))


def test_project_language_identity_copies_input():
    proj = LanguageProjection(4, 4)
    with torch.no_grad():
        proj.weight.copy_(torch.eye(4))
        proj.bias.zero_()
    L = rand(4, seed=3)
    assert torch.allclose(project_language(L, proj), L, atol=0, rtol=0)


@pytest.mark.parametrize("seed", range(5))
def test_project_language_matches_matvec(seed):
    proj = LanguageProjection(7, 5).double()
    L = rand(7, seed=seed)
    ref = matvec_loop(proj.weight.detach().numpy(), proj.bias.detach().numpy(), L.numpy())
    assert np.max(np.abs(project_language(L, proj).detach().numpy() - ref)) <= 1e-6


# ---------------------------------------------------------------- language heatmap


def test_language_heatmap_parallel_and_orthogonal():
    Lp = torch.tensor([1.0, 0.0, 0.0])
    V = torch.zeros(3, 3, 4)
    V[1, :, :] = 2.0  # orthogonal to Lp everywhere
    V[:, 1, 2] = 3 * Lp
    M = language_heatmap(V, Lp)
    expected = torch.zeros(3, 4)
    expected[1, 2] = 1.0
    assert torch.equal(M, expected)


def test_language_heatmap_zero_features_gives_zero():
    M = language_heatmap(torch.zeros(4, 3, 3), rand(4))
    assert torch.equal(M, torch.zeros(3, 3))
    M = language_heatmap(rand(4, 3, 3), torch.zeros(4))
    assert torch.equal(M, torch.zeros(3, 3))


def test_language_heatmap_zero_column_has_finite_gradient():
    V = rand(3, 2, 2).requires_grad_(True)
    with torch.no_grad():
        V[:, 0, 0] = 0
    language_heatmap(V, rand(3, seed=1)).sum().backward()
    assert torch.isfinite(V.grad).all()


@pytest.mark.parametrize("seed", range(10))
def test_language_heatmap_matches_loop(seed):
    V, Lp = rand(3, 2, 2, seed=seed), rand(3, seed=100 + seed)
    ref = cosine_loop(V.numpy(), Lp.numpy())
    assert np.max(np.abs(language_heatmap(V, Lp).numpy() - ref)) <= 1e-6


def test_language_heatmap_batched_matches_single():
    V, Lp = rand(3, 5, 4, 4), rand(5, seed=1)
    batched = language_heatmap(V, Lp)
    for n in range(3):
        assert torch.equal(batched[n], language_heatmap(V[n], Lp))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(1e-3, 1e3))
def test_language_heatmap_range_and_scale_invariance(seed, scale):
    V, Lp = rand(6, 3, 5, seed=seed), rand(6, seed=seed + 1)
    M = language_heatmap(V, Lp)
    assert M.min() >= -1 and M.max() <= 1
    assert torch.allclose(language_heatmap(V, scale * Lp), M, atol=1e-12)


# ---------------------------------------------------------------- prototype


def test_prototype_uniform_weights_is_spatial_mean():
    V = rand(4, 3, 3)
    p, degenerate = extract_prototype(V, torch.ones(3, 3))
    assert not degenerate
    assert torch.allclose(p, V.mean(dim=(1, 2)), atol=1e-12)


def test_prototype_point_mass():
    V = rand(4, 3, 3)
    M = -torch.ones(3, 3)
    M[2, 1] = 1.0
    p, _ = extract_prototype(V, M)
    assert torch.allclose(p, V[:, 2, 1], atol=1e-12)


def test_prototype_all_zero_weights_flags_degenerate():
    p, degenerate = extract_prototype(rand(4, 2, 2), -torch.ones(2, 2))
    assert bool(degenerate)
    assert torch.equal(p, torch.zeros(4))


@pytest.mark.parametrize("seed", range(10))
def test_prototype_matches_loop(seed):
    V = rand(5, 3, 4, seed=seed)
    M = torch.tanh(rand(3, 4, seed=seed + 50))
    p, _ = extract_prototype(V, M)
    assert np.max(np.abs(p.numpy() - prototype_loop(V.numpy(), M.numpy()))) <= 1e-6


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_prototype_in_convex_hull_box(seed):
    # a convex combination lies inside the per-channel min/max of the columns
    V = rand(4, 3, 3, seed=seed)
    M = torch.tanh(rand(3, 3, seed=seed + 1))
    p, _ = extract_prototype(V, M)
    cols = V.reshape(4, -1)
    assert (p >= cols.min(dim=1).values - 1e-12).all()
    assert (p <= cols.max(dim=1).values + 1e-12).all()


def test_prototype_locality_under_group_permutation():
    V, Lp = rand(4, 6, 3, 3), rand(6, seed=9)
    p, _ = extract_prototype(V, language_heatmap(V, Lp))
    perm = torch.tensor([2, 0, 3, 1])
    p_perm, _ = extract_prototype(V[perm], language_heatmap(V[perm], Lp))
    assert torch.equal(p_perm, p[perm])


# ---------------------------------------------------------------- vision heatmaps


def test_vision_heatmap_self_similarity():
    V = rand(5, 4, 4)
    maps = vision_heatmaps(V, V[:, 1, 3].unsqueeze(0))
    assert maps.shape == (1, 4, 4)
    assert maps[0, 1, 3].item() == pytest.approx(1.0, abs=1e-12)


def test_vision_heatmap_orthogonal_prototype():
    V = torch.zeros(3, 2, 2)
    V[:2] = rand(2, 2, 2)
    p = torch.tensor([[0.0, 0.0, 1.0]])
    assert torch.equal(vision_heatmaps(V, p), torch.zeros(1, 2, 2))


@pytest.mark.parametrize("seed", range(5))
def test_vision_heatmaps_match_loop(seed):
    V = rand(4, 3, 3, seed=seed)
    protos = rand(3, 4, seed=seed + 7)
    maps = vision_heatmaps(V, protos)
    assert maps.shape == (3, 3, 3)
    for i in range(3):
        ref = cosine_loop(V.numpy(), protos[i].numpy())
        assert np.max(np.abs(maps[i].numpy() - ref)) <= 1e-6


def test_vision_heatmaps_group_indexing():
    V = rand(3, 4, 2, 2)
    protos = rand(3, 4, seed=1)
    maps = vision_heatmaps(V, protos)
    assert maps.shape == (3, 3, 2, 2)
    for n in range(3):
        assert torch.allclose(maps[n], vision_heatmaps(V[n], protos), atol=1e-14)


def test_self_prototype_peaks_on_positive_weight():
    # one strongly expression-aligned cell; the self-prototype map peaks where pooling weight > 0
    Lp = torch.tensor([1.0, 0.0, 0.0])
    V = torch.zeros(3, 3, 3)
    V[1] = 1.0
    V[:, 0, 2] = torch.tensor([5.0, 0.0, 0.0])
    M = language_heatmap(V, Lp)
    p, _ = extract_prototype(V, M)
    Mv = vision_heatmaps(V, p.unsqueeze(0))[0]
    peak = np.unravel_index(int(Mv.argmax()), Mv.shape)
    assert (M[peak] + 1) / 2 > 0


def test_cosine_map_eps_guard():
    V = torch.full((2, 1, 1), 1e-5)
    q = torch.full((2,), 1e-5)
    assert cosine_map(V, q).item() == 0.0
