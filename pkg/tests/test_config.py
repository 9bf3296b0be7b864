import os

import pytest

from conftest import ROOT
from schemas.config import LossMode, RunConfig, ScoreKind
from utils.config import (
    RESOLVED_CONFIG,
    RUN_ROOT_ENV,
    apply_overrides,
    config_fingerprint,
    echo_config,
    load_config,
    run_dir,
)
from utils.errors import ConfigError


def test_defaults_without_a_file():
    config = load_config()
    assert config == RunConfig()
    assert config.scheme.alpha == 20 and config.infer.iters == 1


def test_template_matches_the_defaults():
    config = load_config(os.path.join(ROOT, "config-template.toml"))
    assert config_fingerprint(config) == config_fingerprint(RunConfig())


def test_overrides_are_typed():
    config = load_config(
        overrides=[
            "train.init_lr=5e-4",
            "model.n_layers=4",
            "infer.score_fn=min",
            'scheme.specials=["MASK", "PAD", "CLS"]',
            "train.clip_norm=0.5",
        ]
    )
    assert config.train.init_lr == 5e-4
    assert config.model.n_layers == 4
    assert config.infer.score_fn == ScoreKind.min
    assert config.scheme.specials == ["MASK", "PAD", "CLS"]
    assert config.train.clip_norm == 0.5


def test_override_nests_new_sections():
    data = apply_overrides({"seed": 1}, ["eval.ks=[1, 5]"])
    assert data == {"seed": 1, "eval": {"ks": [1, 5]}}


@pytest.mark.parametrize(
    "override",
    ["train.bogus=1", "nosuch.key=1", "train", "=3", "model.n_layers=-1", "seed.inner=2"],
)
def test_bad_overrides_raise_config_error(override):
    with pytest.raises(ConfigError):
        load_config(overrides=[override])


def test_sections_inherit_the_root_seed():
    config = load_config(overrides=["seed=7", "scheme.seed=3"])
    assert config.scheme.seed == 3
    assert config.train.seed == 7
    assert config.corpus.seed == 7 and config.corpus.split_seed == 7


def test_sampled_softmax_requires_an_unhashed_vocabulary():
    with pytest.raises(ConfigError):
        load_config(overrides=["train.loss_mode=sampled_softmax"])
    config = load_config(overrides=["train.loss_mode=sampled_softmax", "scheme.m=1", "scheme.alpha=1"])
    assert config.train.loss_mode == LossMode.sampled_softmax


def test_heads_must_fit_the_width():
    with pytest.raises(ConfigError):
        load_config(overrides=["model.d=8", "model.n_heads=2", "model.d_head=8"])


def test_echo_reloads_to_the_same_config(tmp_path):
    config = load_config(overrides=["seed=5", "model.d=32", "infer.iters=0", "eval.max_examples=50"])
    path = echo_config(config, str(tmp_path))
    assert os.path.basename(path) == RESOLVED_CONFIG
    text = open(path, encoding="utf-8").read()
    assert text.startswith(f"# fingerprint {config_fingerprint(config)}")
    reloaded = load_config(path)
    assert reloaded == config
    assert config_fingerprint(reloaded) == config_fingerprint(config)


def test_fingerprint_tracks_content():
    a = load_config(overrides=["model.d=32"])
    b = load_config(overrides=["model.d=32"])
    c = load_config(overrides=["model.d=48"])
    assert config_fingerprint(a) == config_fingerprint(b)
    assert config_fingerprint(a) != config_fingerprint(c)
    assert len(config_fingerprint(a)) == 12


def test_invalid_toml_file(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("[train\nbatch_size = 4\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(path))
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.toml"))


def test_run_dir_uses_the_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(RUN_ROOT_ENV, str(tmp_path))
    config = RunConfig()
    assert run_dir(config, "train") == os.path.join(str(tmp_path), f"train-{config_fingerprint(config)}")
