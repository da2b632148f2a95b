import pytest

from gres.config import RunConfig, dump_config, load_config, parse_config_text, valid_keys


def test_defaults():
    cfg = RunConfig()
    assert (cfg.N, cfg.m, cfg.C_l, cfg.C_v, cfg.image_size) == (4, 1.0, 64, 64, 64)
    assert cfg.use_tqm and cfg.use_hierarchizer and cfg.use_mirror and cfg.use_triplet


def test_parse_types_and_comments():
    cfg = parse_config_text("""
        # comment line
        N = 2          # trailing comment
        lr = 5e-4
        use_tqm = false
        rank_criterion = random
    """)
    assert cfg.N == 2 and cfg.lr == 5e-4 and cfg.use_tqm is False and cfg.rank_criterion == "random"


def test_unknown_key_lists_valid_keys():
    with pytest.raises(ValueError) as info:
        parse_config_text("epochs = 3\nbatch_size = 8\n")
    msg = str(info.value)
    assert "batch_size" in msg
    for key in valid_keys():
        assert key in msg


@pytest.mark.parametrize(
    "text",
    ["N = 0", "epochs = 0", "m = -1", "lam = -0.5", "rank_criterion = best", "image_size = 30", "use_tqm = maybe", "N"],
)
def test_invalid_values(text):
    with pytest.raises(ValueError):
        parse_config_text(text)


def test_dump_load_round_trip(tmp_path):
    cfg = RunConfig(N=2, lr=1e-4, use_mirror=False, rank_criterion="neg", seed=9)
    path = tmp_path / "c.cfg"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_flags_are_independent():
    for key in ("use_tqm", "use_hierarchizer", "use_mirror", "use_triplet"):
        cfg = RunConfig().replace(**{key: False})
        assert sum(not getattr(cfg, k) for k in ("use_tqm", "use_hierarchizer", "use_mirror", "use_triplet")) == 1
