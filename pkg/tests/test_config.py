"""Run-config loading: schema strictness, validation, env overrides, hashing."""

import pytest

from sketchldm.config import RunConfig, load_run_config, run_config_from_mapping
from sketchldm.errors import ConfigurationError

MINIMAL = """
seed: 7
out_dir: /tmp/example_run
data:
  n_points: 32
  ratio: 4
"""


def write_yaml(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_minimal_yaml_loads_with_defaults(tmp_path):
    cfg = load_run_config(write_yaml(tmp_path, MINIMAL))
    assert cfg.seed == 7
    assert cfg.out_dir == "/tmp/example_run"
    assert cfg.device == "cpu"
    assert cfg.data.n_points == 32
    assert cfg.data.epsilon == 0.01
    assert cfg.vae.width == 128
    assert cfg.ldm.stroke_mode == "token"
    assert cfg.schedule.T == 1000
    assert cfg.train.batch_size == 64
    assert cfg.lora.rank == 8


def test_empty_mapping_gives_pure_defaults():
    cfg = run_config_from_mapping({})
    assert cfg == RunConfig()


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigurationError, match="optimizer"):
        run_config_from_mapping({"optimizer": "adam"})


def test_unknown_section_key_rejected():
    with pytest.raises(ConfigurationError, match="vae.*depht|depht"):
        run_config_from_mapping({"vae": {"depht": 3}})


def test_section_must_be_mapping():
    with pytest.raises(ConfigurationError, match="train"):
        run_config_from_mapping({"train": 5})


def test_non_mapping_document_rejected(tmp_path):
    with pytest.raises(ConfigurationError):
        load_run_config(write_yaml(tmp_path, "- just\n- a\n- list\n"))


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        load_run_config(tmp_path / "absent.yaml")


@pytest.mark.parametrize("mapping, fragment", [
    ({"data": {"n_points": 30, "ratio": 4}}, "multiple"),
    ({"data": {"n_points": 0}}, "n_points"),
    ({"data": {"epsilon": -0.5}}, "epsilon"),
    ({"vae": {"width": 10, "head_count": 4}}, "head_count"),
    ({"ldm": {"width": 10, "head_count": 4}}, "head_count"),
    ({"ldm": {"stroke_mode": "banana"}}, "stroke_mode"),
    ({"ldm": {"stroke_max": 0}}, "stroke_max"),
    ({"schedule": {"T": 0}}, "schedule.T"),
    ({"schedule": {"beta_start": 0.5, "beta_end": 0.2}}, "beta"),
    ({"train": {"steps": -1}}, "steps"),
    ({"train": {"batch_size": 0}}, "batch_size"),
    ({"train": {"lr": 0.0}}, "lr"),
    ({"train": {"steps": 10, "total_steps": 5}}, "total_steps"),
    ({"lora": {"rank": 0}}, "rank"),
    ({"device": "gpu7"}, "device"),
])
def test_invalid_values_rejected(mapping, fragment):
    with pytest.raises(ConfigurationError, match=fragment):
        run_config_from_mapping(mapping)


def test_cuda_rejected_when_unavailable():
    import torch
    if torch.cuda.is_available():
        pytest.skip("host has cuda")
    with pytest.raises(ConfigurationError, match="cuda"):
        run_config_from_mapping({"device": "cuda"})


def test_env_overrides_paths_and_device(tmp_path, monkeypatch):
    monkeypatch.setenv("SKETCHLDM_OUT_DIR", "/elsewhere/out")
    monkeypatch.setenv("SKETCHLDM_CACHE", "/elsewhere/cache.bin")
    monkeypatch.setenv("SKETCHLDM_MANIFEST", "/elsewhere/pairs.tsv")
    monkeypatch.setenv("SKETCHLDM_CONTEXT_CACHE", "/elsewhere/ctx.pt")
    monkeypatch.setenv("SKETCHLDM_DEVICE", "cpu")
    cfg = load_run_config(write_yaml(tmp_path, MINIMAL))
    assert cfg.out_dir == "/elsewhere/out"
    assert cfg.data.cache == "/elsewhere/cache.bin"
    assert cfg.data.manifest == "/elsewhere/pairs.tsv"
    assert cfg.data.context_cache == "/elsewhere/ctx.pt"
    assert cfg.device == "cpu"


def test_env_cannot_override_hyperparameters(tmp_path, monkeypatch):
    # Only paths and device respond to the environment by design.
    monkeypatch.setenv("SKETCHLDM_SEED", "99")
    monkeypatch.setenv("SKETCHLDM_LR", "0.5")
    cfg = load_run_config(write_yaml(tmp_path, MINIMAL))
    assert cfg.seed == 7
    assert cfg.train.lr == pytest.approx(1e-4)


def test_env_override_still_validated(tmp_path, monkeypatch):
    monkeypatch.setenv("SKETCHLDM_DEVICE", "toaster")
    with pytest.raises(ConfigurationError, match="device"):
        load_run_config(write_yaml(tmp_path, MINIMAL))


def test_to_dict_roundtrip():
    cfg = run_config_from_mapping({"seed": 3, "ldm": {"width": 24,
                                                      "head_count": 4}})
    again = run_config_from_mapping(cfg.to_dict())
    assert again == cfg


def test_config_hash_insensitive_to_yaml_ordering(tmp_path):
    a = load_run_config(write_yaml(tmp_path, """
seed: 1
train:
  steps: 10
  lr: 0.001
""", "a.yaml"))
    b = load_run_config(write_yaml(tmp_path, """
train:
  lr: 0.001
  steps: 10
seed: 1
""", "b.yaml"))
    assert a.config_hash == b.config_hash
    assert len(a.config_hash) == 12


def test_config_hash_changes_with_any_value():
    base = run_config_from_mapping({"seed": 1})
    other = run_config_from_mapping({"seed": 2})
    assert base.config_hash != other.config_hash
