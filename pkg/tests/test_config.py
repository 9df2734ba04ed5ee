import pytest

from agconv.config import TrainConfig, config_to_text, load_config_file, make_config, parse_config_text
from agconv.exceptions import ConfigError


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.lr_max, cfg.lr_min, cfg.momentum, cfg.k, cfg.batch_size) == (0.1, 0.001, 0.9, 20, 8)


def test_parse_comments_and_blanks():
    text = "# run\nepochs = 3   # short\n\nshapes = cube, torus\nnorm = off\n"
    cfg = make_config(parse_config_text(text))
    assert cfg.epochs == 3 and cfg.shapes == ("cube", "torus") and cfg.norm is False


def test_unknown_key_is_an_error():
    with pytest.raises(ConfigError, match="epoch"):
        make_config({"epoch": "3"})


@pytest.mark.parametrize("text", ["epochs 3", "k = many", "norm = maybe"])
def test_bad_lines(text):
    with pytest.raises(ConfigError):
        make_config(parse_config_text(text))


@pytest.mark.parametrize("changes", [dict(lr_min=0.2), dict(k=0), dict(task="det"), dict(grad_clip=-1.0)])
def test_invariants(changes):
    with pytest.raises(ConfigError):
        TrainConfig(**changes)


def test_text_round_trip(tmp_path):
    cfg = TrainConfig(epochs=7, widths=(8, 8, 16, 16), keep_fractions=(1.0, 0.5), augment=False, data="x/m.txt")
    path = tmp_path / "run.cfg"
    path.write_text(config_to_text(cfg))
    assert make_config(load_config_file(path)) == cfg


def test_overrides_apply_on_base():
    base = TrainConfig(epochs=4)
    cfg = make_config({"k": "10"}, base)
    assert cfg.epochs == 4 and cfg.k == 10
