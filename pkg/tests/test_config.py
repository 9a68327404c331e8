import json

import pytest
import yaml

from moe_sim.config import apply_override, load_config, update_section, validate_config
from moe_sim.errors import ConfigError
from moe_sim.models import CameraModel, EncoderConfig, FingerModel, GlobalConfig, PoseMode, SceneConfig


def test_defaults_without_a_file():
    config = load_config()
    assert config == GlobalConfig()
    assert config.mechanics.finger.n_links == 8
    assert config.controller.target_force == 2.0


def test_yaml_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(
        yaml.safe_dump({"scene": {"head": {"h_hair": 0.015}, "pose": {"mode": "sinusoidal-drift"}}})
    )
    config = load_config(path)
    assert config.scene.head.h_hair == 0.015
    assert config.scene.pose.mode is PoseMode.SINUSOIDAL


def test_json_file_with_lambda_alias(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"train": {"lambda": [2.0, 2.0, 1.0], "epochs": 5}}))
    config = load_config(path)
    assert config.train.loss_weights == (2.0, 2.0, 1.0)
    assert config.train.epochs == 5


def test_overrides_parse_json_values():
    config = load_config(overrides=["mechanics.finger.n_links=6", "sampler.wig=wig3", "camera.width=48"])
    assert config.mechanics.finger.n_links == 6
    assert config.sampler.wig == "wig3"
    assert config.camera.width == 48


def test_global_seed_reaches_every_seeded_section():
    config = load_config(seed=42)
    assert config.sampler.seed == config.train.seed == config.controller.seed == 42


def test_override_needs_an_assignment():
    with pytest.raises(ConfigError):
        apply_override({}, "scene.head.h_hair")


def test_override_cannot_descend_into_a_value():
    document = {"scene": {"head": 3}}
    with pytest.raises(ConfigError):
        apply_override(document, "scene.head.h_hair=0.01")


def test_validation_lists_every_problem():
    with pytest.raises(ConfigError) as info:
        validate_config({"scene": {"head": {"radius": -1.0}}, "train": {"lambda": [1.0, 0.0, 1.0]}})
    locations = " ".join(info.value.problems)
    assert "scene.head.radius" in locations
    assert "train.lambda" in locations


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError):
        validate_config({"mechanics": {"finger": {"stiffness": 1.0}}})


def test_missing_or_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(broken)
    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(listing)


def test_empty_yaml_means_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    assert load_config(path) == GlobalConfig()


@pytest.mark.parametrize(
    "factory",
    [
        lambda: FingerModel(moment_arm=0.01, radius=0.008),
        lambda: CameraModel(cx=70.0),
        lambda: CameraModel(min_range_mm=600),
        lambda: EncoderConfig(kernel=4),
        lambda: EncoderConfig(channels=()),
    ],
)
def test_model_invariants(factory):
    with pytest.raises(ValueError):
        factory()


def test_wig_presets_must_be_distinct():
    wigs = SceneConfig().wigs
    with pytest.raises(ValueError):
        SceneConfig(wigs=[wigs[0], wigs[0]])
    with pytest.raises(ValueError):
        SceneConfig(wigs=[wigs[0], wigs[1].model_copy(update={"h_hair": 0.015, "k_hair": 900.0})])


def test_section_updates_are_validated():
    sampler = GlobalConfig().sampler
    updated = update_section(sampler, {"wig": "wig3", "n_episodes": 12}, "sampler")
    assert (updated.wig, updated.n_episodes, updated.seed) == ("wig3", 12, sampler.seed)
    with pytest.raises(ConfigError) as info:
        update_section(sampler, {"n_episodes": -3, "workers": 0}, "sampler")
    assert sorted(info.value.problems) == [
        "sampler.n_episodes: Input should be greater than or equal to 0",
        "sampler.workers: Input should be greater than or equal to 1",
    ]


def test_train_section_update_keeps_the_lambda_alias():
    train = GlobalConfig(train={"lambda": [2.0, 2.0, 1.0]}).train
    assert update_section(train, {"seed": 4}, "train").loss_weights == (2.0, 2.0, 1.0)
