"""Tests for latent diffusion training, sampling, and photo fine-tuning."""

import numpy as np
import pytest
import torch
import torch.nn as nn

from sketchldm.conditioning import FixtureEncoder, LoraLinear, build_context_cache
from sketchldm.diffusion import make_schedule
from sketchldm.errors import ConfigurationError, InvalidInputError
from sketchldm.sketch_data.paired import load_photo_sketch_pairs
from sketchldm.sketch_data.preprocess import count_strokes
from sketchldm.sketch_data.quickdraw import load_quickdraw
from sketchldm.sketch_data.synthetic import (
    write_photo_sketch_fixture,
    write_synthetic_quickdraw,
)
from sketchldm.train_ldm import (
    copy_overlapping_weights,
    encode_dataset,
    finetune_photo,
    load_ldm,
    sample_sketches,
    schedule_from_checkpoint,
    train_ldm,
)
from sketchldm.vae.model import VaeConfig
from sketchldm.vae.train import records_to_tensor, train_vae

SCHED = make_schedule(T=50)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("ldm_corpus")
    path = write_synthetic_quickdraw(root / "synth.ndjson", ["star", "grid"],
                                     per_category=40, seed=0)
    records, _ = load_quickdraw(path, ["star", "grid"], n_points=32)
    return records


@pytest.fixture(scope="module")
def small_vae(corpus):
    cfg = VaeConfig(n_points=32, ratio=4, model_width=32, depth_per_stage=1,
                    head_count=4)
    model, info = train_vae(records_to_tensor(corpus), cfg, steps=60,
                            batch_size=32, seed=0)
    return model, info["latent_std"]


def quick_ldm(corpus, small_vae, **kw):
    vae, latent_std = small_vae
    defaults = dict(steps=20, batch_size=16, seed=0, width=32, depth=2,
                    head_count=4, schedule=SCHED, log_every=10)
    defaults.update(kw)
    return train_ldm(corpus, vae, latent_std, **defaults)


# --- dataset encoding --------------------------------------------------------


def test_encode_dataset_standardization(corpus, small_vae):
    vae, latent_std = small_vae
    data = encode_dataset(corpus[:8], vae, latent_std)
    x = records_to_tensor(corpus[:8])
    with torch.no_grad():
        mean, _ = vae.encode(x)
    assert torch.allclose(data.z0, mean / latent_std, atol=1e-6)
    assert data.z0.shape == (8, 8, 3)


def test_encode_dataset_collects_conditions(corpus, small_vae):
    vae, latent_std = small_vae
    data = encode_dataset(corpus[:10], vae, latent_std)
    for i, rec in enumerate(corpus[:10]):
        assert int(data.point_count[i]) == rec.sketch.realized_length
        assert int(data.stroke_count[i]) == count_strokes(rec.sketch).stroke_count
        assert int(data.class_id[i]) == rec.category_id
    assert data.photo_id is None


def test_encode_dataset_rejects_empty(small_vae):
    vae, latent_std = small_vae
    with pytest.raises(InvalidInputError):
        encode_dataset([], vae, latent_std)


# --- training ----------------------------------------------------------------


def test_train_ldm_deterministic(corpus, small_vae):
    a, _ = quick_ldm(corpus, small_vae, steps=5)
    b, _ = quick_ldm(corpus, small_vae, steps=5)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and torch.equal(pa, pb), na


def test_train_ldm_resume_bit_equal(corpus, small_vae, tmp_path):
    ckpt = tmp_path / "mid.pt"
    quick_ldm(corpus, small_vae, steps=3, total_steps=6, checkpoint_path=ckpt)
    resumed, _ = quick_ldm(corpus, small_vae, steps=6, resume_from=ckpt)
    straight, _ = quick_ldm(corpus, small_vae, steps=6)
    for (nr, pr), (ns, ps) in zip(resumed.named_parameters(),
                                  straight.named_parameters()):
        assert torch.equal(pr, ps), nr


def test_train_ldm_zero_steps_builds_model(corpus, small_vae):
    model, info = quick_ldm(corpus, small_vae, steps=0, use_class=False,
                            use_points=False, use_strokes=False)
    assert info["final_loss"] is None
    assert model.config.use_class is False


def test_train_ldm_infers_num_classes(corpus, small_vae):
    model, _ = quick_ldm(corpus, small_vae, steps=1)
    assert model.config.num_classes == 2


def test_train_ldm_writes_csv(corpus, small_vae, tmp_path):
    csv = tmp_path / "log.csv"
    quick_ldm(corpus, small_vae, steps=10, log_every=4, csv_path=csv)
    lines = csv.read_text().strip().splitlines()
    assert lines[0] == "step,loss,lr"
    assert [row.split(",")[0] for row in lines[1:]] == ["4", "8", "10"]


def test_train_ldm_condition_validation(corpus, small_vae):
    vae, latent_std = small_vae
    with pytest.raises(InvalidInputError, match="strokes"):
        quick_ldm(corpus, small_vae, steps=1, stroke_max=1)
    with pytest.raises(InvalidInputError, match="photo"):
        quick_ldm(corpus, small_vae, steps=1, use_class=False, use_photo=True)
    unlabeled = [type(r)(sketch=r.sketch, category_id=None) for r in corpus[:4]]
    with pytest.raises(InvalidInputError, match="labeled"):
        train_ldm(unlabeled, vae, latent_std, steps=1, width=32, depth=1,
                  head_count=4, schedule=SCHED)


def test_train_ldm_rejects_bad_horizon(corpus, small_vae):
    with pytest.raises(ConfigurationError):
        quick_ldm(corpus, small_vae, steps=5, total_steps=3)


# --- checkpointing -----------------------------------------------------------


def test_ldm_checkpoint_roundtrip(corpus, small_vae, tmp_path):
    vae, latent_std = small_vae
    ckpt = tmp_path / "ldm.pt"
    model, _ = quick_ldm(corpus, small_vae, steps=4, checkpoint_path=ckpt)
    loaded, loaded_std, payload = load_ldm(ckpt)
    assert torch.equal(loaded_std, latent_std)
    for (nl, pl), (nm, pm) in zip(loaded.named_parameters(),
                                  model.named_parameters()):
        assert nl == nm and torch.equal(pl, pm)
    sched = schedule_from_checkpoint(payload)
    assert sched.T == SCHED.T
    assert np.allclose(sched.betas, SCHED.betas)


# --- sampling ----------------------------------------------------------------


def test_sample_sketches_deterministic_and_valid(corpus, small_vae):
    vae, latent_std = small_vae
    model, _ = quick_ldm(corpus, small_vae, steps=10)
    kwargs = dict(class_id=[0, 1], point_count=[16, 32], stroke_count=[2, 4],
                  schedule=SCHED, seed=7)
    a = sample_sketches(model, vae, latent_std, **kwargs)
    b = sample_sketches(model, vae, latent_std, **kwargs)
    assert len(a) == 2
    for sa, sb in zip(a, b):
        sa.validate()
        assert np.array_equal(sa.points, sb.points)
        assert sa.realized_length == sb.realized_length
    c = sample_sketches(model, vae, latent_std, seed=8, **{k: v for k, v in
                        kwargs.items() if k != "seed"})
    assert any(not np.array_equal(sa.points, sc.points) for sa, sc in zip(a, c))


def test_sample_sketches_broadcasts_scalars(corpus, small_vae):
    vae, latent_std = small_vae
    model, _ = quick_ldm(corpus, small_vae, steps=2)
    out = sample_sketches(model, vae, latent_std, count=3, class_id=1,
                          point_count=24, stroke_count=2, schedule=SCHED,
                          seed=0, sample_steps=10)
    assert len(out) == 3


def test_sample_sketches_validation(corpus, small_vae):
    vae, latent_std = small_vae
    model, _ = quick_ldm(corpus, small_vae, steps=2)
    with pytest.raises(InvalidInputError, match="count"):
        sample_sketches(model, vae, latent_std, schedule=SCHED)
    with pytest.raises(InvalidInputError, match="batch"):
        sample_sketches(model, vae, latent_std, class_id=[0, 1],
                        point_count=[8, 8, 8], stroke_count=2, schedule=SCHED)


# --- weight transplant -------------------------------------------------------


class _Donor(nn.Module):
    def __init__(self):
        super().__init__()
        self.shared = nn.Linear(4, 4)
        self.donor_only = nn.Linear(2, 2)
        self.resized = nn.Linear(3, 3)


class _Recipient(nn.Module):
    def __init__(self):
        super().__init__()
        self.shared = nn.Linear(4, 4)
        self.new_part = nn.Linear(5, 5)
        self.resized = nn.Linear(6, 6)


def test_copy_overlapping_weights_report():
    torch.manual_seed(0)
    donor, recipient = _Donor(), _Recipient()
    report = copy_overlapping_weights(recipient, donor.state_dict())
    assert torch.equal(recipient.shared.weight, donor.shared.weight)
    assert sorted(report["copied"]) == ["shared.bias", "shared.weight"]
    assert set(report["shape_mismatch"]) == {"resized.weight", "resized.bias"}
    assert "new_part.weight" in report["missing"]
    assert "donor_only.weight" in report["unused"]


# --- photo fine-tuning -------------------------------------------------------


@pytest.fixture(scope="module")
def photo_setup(tmp_path_factory, corpus, small_vae):
    root = tmp_path_factory.mktemp("pairs")
    manifest = write_photo_sketch_fixture(root, n_pairs=6, seed=0)
    records, photos = load_photo_sketch_pairs(manifest, n_points=32)
    cache = build_context_cache(photos, FixtureEncoder(context_width=16))
    base, _ = quick_ldm(corpus, small_vae, steps=5)
    return records, cache, base


def test_finetune_freezes_base_and_trains_adapters(photo_setup, small_vae):
    records, cache, base = photo_setup
    vae, latent_std = small_vae
    model, info, report = finetune_photo(records, cache, base, vae, latent_std,
                                         steps=8, batch_size=4, schedule=SCHED,
                                         seed=0)
    # inherited weights frozen and bit-identical to the base model
    base_state = base.state_dict()
    for name in report["copied"]:
        live = model.state_dict()[name.replace("attn.q_proj", "attn.q_proj.base")
                                  .replace("attn.k_proj", "attn.k_proj.base")
                                  .replace("attn.v_proj", "attn.v_proj.base")
                                  .replace("attn.out_proj", "attn.out_proj.base")]
        assert torch.equal(live, base_state[name]), name
    # adapters actually moved: every B factor is nonzero after training
    lora_bs = [m.lora_b.detach() for m in model.modules()
               if isinstance(m, LoraLinear)]
    assert lora_bs and all(float(b.abs().max()) > 0 for b in lora_bs)
    # the class table was dropped, the cross-attention layers are new
    assert any("class_embed" in n for n in report["unused"])
    assert all(not n.startswith("photo_cross") for n in report["copied"])
    assert info["trainable_parameters"] == sum(
        p.numel() for p in model.parameters() if p.requires_grad)


def test_finetune_checkpoint_is_merged(photo_setup, small_vae, tmp_path):
    records, cache, base = photo_setup
    vae, latent_std = small_vae
    ckpt = tmp_path / "photo.pt"
    model, _, _ = finetune_photo(records, cache, base, vae, latent_std,
                                 steps=5, batch_size=4, schedule=SCHED,
                                 seed=0, checkpoint_path=ckpt)
    loaded, _, payload = load_ldm(ckpt)
    assert payload["extra"]["finetuned_from_class_model"] is True
    assert not any(isinstance(m, LoraLinear) for m in loaded.modules())
    # merged deployment model matches the adapted model's predictions
    z = torch.randn(2, 8, 3, generator=torch.Generator().manual_seed(0))
    t = torch.tensor([5, 9])
    from sketchldm.backbone import ConditioningBundle
    bundle = ConditioningBundle(
        point_count=torch.tensor([16, 24]), stroke_count=torch.tensor([2, 3]),
        photo_context=torch.stack([cache[0], cache[1]]))
    with torch.no_grad():
        want = model(z, t, bundle)
        got = loaded(z, t, bundle)
    assert torch.allclose(got, want, atol=1e-5)


def test_finetune_rejects_photo_base(photo_setup, small_vae):
    records, cache, base = photo_setup
    vae, latent_std = small_vae
    model, _, _ = finetune_photo(records, cache, base, vae, latent_std,
                                 steps=1, batch_size=4, schedule=SCHED, seed=0)
    with pytest.raises(ConfigurationError):
        finetune_photo(records, cache, model, vae, latent_std, steps=1,
                       batch_size=4, schedule=SCHED, seed=0)
    with pytest.raises(InvalidInputError):
        finetune_photo(records, {}, base, vae, latent_std, steps=1,
                       batch_size=4, schedule=SCHED, seed=0)


def test_finetuned_model_responds_to_photo_context(photo_setup, small_vae):
    records, cache, base = photo_setup
    vae, latent_std = small_vae
    model, _, _ = finetune_photo(records, cache, base, vae, latent_std,
                                 steps=8, batch_size=4, schedule=SCHED, seed=0)
    a = sample_sketches(model, vae, latent_std, photo_context=cache[0], count=1,
                        point_count=16, stroke_count=2, schedule=SCHED, seed=3)
    b = sample_sketches(model, vae, latent_std, photo_context=cache[3], count=1,
                        point_count=16, stroke_count=2, schedule=SCHED, seed=3)
    assert not np.array_equal(a[0].points, b[0].points)
