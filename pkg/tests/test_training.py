import math

import pytest
import torch

from scribegan.codec import CharCodec
from scribegan.data import Batch
from scribegan.training import (
    CheckpointError,
    NaNLossError,
    TrainConfig,
    Trainer,
    read_checkpoint,
    recognizer_from_checkpoint,
    save_recognizer_checkpoint,
    trainer_from_checkpoint,
)

CODEC = CharCodec(list("abcdef"))


def make_trainer(**cfg_kwargs) -> Trainer:
    cfg_kwargs.setdefault("batch_size", 1)
    return Trainer(CODEC, TrainConfig(**cfg_kwargs), seed=0)


def rand_real(batch=1, words=("abc",)):
    words = list(words)[:batch]
    return Batch(
        images=torch.rand(batch, 1, 128, 512) * 2 - 1,
        transcripts=words,
        labels=[CODEC.encode_tensor(w) for w in words],
        source="real",
    )


def test_config_defaults():
    cfg = TrainConfig()
    assert cfg.lr == 2e-4
    assert cfg.beta1 == 0.0
    assert cfg.beta2 == 0.999
    assert cfg.batch_size == 64
    assert cfg.alpha == 1.0
    assert cfg.adv_loss == "hinge"


def test_d_step_zero_lr_is_noop():
    trainer = make_trainer(lr=0.0)
    before = [p.detach().clone() for p in trainer.discriminator.parameters()]
    fake = trainer.make_fake_batch(["fed"])
    trainer.train_step_d(rand_real(), fake)
    for p, b in zip(trainer.discriminator.parameters(), before):
        assert torch.equal(p, b)


def test_d_step_metrics_split_terms():
    trainer = make_trainer()
    fake = trainer.make_fake_batch(["fed"])
    metrics = trainer.train_step_d(rand_real(), fake)
    assert set(metrics) == {"loss_D", "loss_D_real", "loss_D_fake"}
    assert metrics["loss_D"] == pytest.approx(
        metrics["loss_D_real"] + metrics["loss_D_fake"], rel=1e-6
    )


def test_d_step_rejects_impure_or_short_batches():
    trainer = make_trainer(batch_size=2)
    fake = trainer.make_fake_batch(["fed", "cab"])
    with pytest.raises(ValueError):
        trainer.train_step_d(fake, fake)  # "real" slot holds a generated batch
    with pytest.raises(ValueError):
        trainer.train_step_d(rand_real(1), fake)  # undersized real batch


def test_r_step_rejects_generated_batch():
    trainer = make_trainer()
    fake = trainer.make_fake_batch(["fed"])
    with pytest.raises(ValueError, match="real"):
        trainer.train_step_r(fake)
    assert trainer.r_step_sources == []


def test_r_step_zero_lr_is_noop():
    trainer = make_trainer(lr=0.0)
    before = [p.detach().clone() for p in trainer.recognizer.parameters()]
    trainer.train_step_r(rand_real())
    for p, b in zip(trainer.recognizer.parameters(), before):
        assert torch.equal(p, b)
    assert trainer.r_step_sources == ["real"]


def test_r_loss_decreases_on_fixed_batch():
    trainer = make_trainer(batch_size=2, lr=1e-3)
    batch = rand_real(2, ("abc", "fed"))
    losses = [trainer.train_step_r(batch)["loss_R"] for _ in range(12)]
    assert losses[-1] < losses[0]


def test_g_step_leaves_d_and_r_untouched():
    trainer = make_trainer()
    d_before = [p.detach().clone() for p in trainer.discriminator.parameters()]
    r_before = [p.detach().clone() for p in trainer.recognizer.parameters()]
    metrics, report = trainer.train_step_g(["cab"])
    for p, b in zip(trainer.discriminator.parameters(), d_before):
        assert torch.equal(p, b)
    for p, b in zip(trainer.recognizer.parameters(), r_before):
        assert torch.equal(p, b)
    assert report.balanced.shape == (1, 1, 128, 512)
    assert metrics["loss_G_ctc"] > 0


def test_g_step_updates_g_and_phi():
    trainer = make_trainer()
    g_before = [p.detach().clone() for p in trainer.generator.parameters()]
    phi_before = [p.detach().clone() for p in trainer.text_encoder.parameters()]
    trainer.train_step_g(["cab"])
    assert any(
        not torch.equal(p, b) for p, b in zip(trainer.generator.parameters(), g_before)
    )
    assert any(
        not torch.equal(p, b)
        for p, b in zip(trainer.text_encoder.parameters(), phi_before)
    )


def test_g_step_balanced_statistics_match_target():
    trainer = make_trainer(batch_size=2)
    _, report = trainer.train_step_g(["cab", "bed"])
    assert report.alpha == 1.0
    mean = float(report.balanced.mean())
    std = float(report.balanced.std(unbiased=False))
    assert mean == pytest.approx(report.mu_d, rel=1e-4, abs=1e-9)
    assert std == pytest.approx(report.sigma_d, rel=1e-4)


def test_g_step_alpha_disabled_passthrough():
    trainer = make_trainer(alpha=None)
    _, report = trainer.train_step_g(["cab"])
    assert report.alpha is None
    # untouched gradient: its statistics are the recognizer's own
    assert float(report.balanced.mean()) == pytest.approx(report.mu_r, abs=1e-9)


def test_nan_loss_aborts():
    trainer = make_trainer()
    bad = rand_real()
    bad.images[0, 0, 0, 0] = float("nan")
    with pytest.raises(NaNLossError):
        trainer.train_step_r(bad)


@pytest.mark.slow
def test_r_overfits_eight_samples_below_point_one():
    # toy-run oracle: CTC loss on a fixed 8-sample set sinks below 0.1
    torch.manual_seed(0)
    trainer = Trainer(CODEC, TrainConfig(batch_size=8), seed=0)
    words = ["abc", "fed", "cab", "bed", "ace", "dad", "fab", "bee"]
    batch = Batch(
        images=torch.rand(8, 1, 128, 512) * 2 - 1,
        transcripts=words,
        labels=[CODEC.encode_tensor(w) for w in words],
        source="real",
    )
    loss = float("inf")
    for step in range(2000):
        loss = trainer.train_step_r(batch)["loss_R"]
        if loss < 0.1:
            break
    assert loss < 0.1, f"loss {loss:.3f} after {step + 1} steps"


def test_adam_beta1_zero_matches_scalar_rmsprop_oracle():
    # beta1=0 Adam reduces to bias-corrected RMSProp; 5 hand-rolled steps
    lr, beta2, eps = 2e-4, 0.999, 1e-8
    param = torch.nn.Parameter(torch.tensor([1.5]))
    opt = torch.optim.Adam([param], lr=lr, betas=(0.0, beta2), eps=eps)
    grads = [0.3, -0.7, 1.1, 0.05, -0.2]
    x = 1.5
    v = 0.0
    for step, g in enumerate(grads, start=1):
        opt.zero_grad()
        param.grad = torch.tensor([g])
        opt.step()
        v = beta2 * v + (1 - beta2) * g * g
        v_hat = v / (1 - beta2**step)
        x = x - lr * g / (math.sqrt(v_hat) + eps)
        assert float(param.detach()) == pytest.approx(x, rel=1e-6)


# ------------------------------------------------------------- checkpointing


def test_checkpoint_round_trip_bitwise_generation(tmp_path):
    trainer = make_trainer()
    trainer.train_step_g(["cab"])  # move off the init point
    path = tmp_path / "ckpt.pt"
    trainer.save_checkpoint(path)
    z = torch.randn(2, 128, generator=torch.Generator().manual_seed(9))
    reference = trainer.generate(["abc", "fed"], z=z)
    probe = torch.rand(2, 1, 128, 512, generator=torch.Generator().manual_seed(10)) * 2 - 1
    trainer.discriminator.eval()
    trainer.recognizer.eval()
    d_ref = trainer.discriminator(probe)
    r_ref = trainer.recognizer(probe)

    restored = trainer_from_checkpoint(path)
    assert torch.equal(reference, restored.generate(["abc", "fed"], z=z))
    restored.discriminator.eval()
    restored.recognizer.eval()
    assert torch.equal(d_ref, restored.discriminator(probe))
    assert torch.equal(r_ref, restored.recognizer(probe))


def test_checkpoint_truncated_file_is_corruption_error(tmp_path):
    trainer = make_trainer()
    path = tmp_path / "ckpt.pt"
    trainer.save_checkpoint(path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 3])
    with pytest.raises(CheckpointError, match="corrupt"):
        read_checkpoint(path)


def test_checkpoint_version_mismatch(tmp_path):
    trainer = make_trainer()
    path = tmp_path / "ckpt.pt"
    state = trainer.state_dict()
    state["version"] = 99
    torch.save(state, path)
    with pytest.raises(CheckpointError, match="version"):
        read_checkpoint(path)


def test_checkpoint_alphabet_mismatch_names_field(tmp_path):
    trainer = make_trainer()
    path = tmp_path / "ckpt.pt"
    trainer.save_checkpoint(path)
    other = Trainer(CharCodec(list("xyz")), TrainConfig(batch_size=1))
    with pytest.raises(CheckpointError, match="codec_chars"):
        other.load_checkpoint(path)


def test_checkpoint_architecture_mismatch_names_field(tmp_path):
    trainer = make_trainer()
    path = tmp_path / "ckpt.pt"
    trainer.save_checkpoint(path)
    other = Trainer(CODEC, TrainConfig(batch_size=1, self_attention=False))
    with pytest.raises(CheckpointError, match="self_attention"):
        other.load_checkpoint(path)


def test_missing_checkpoint_file():
    with pytest.raises(CheckpointError, match="exist"):
        read_checkpoint("/nonexistent/ckpt.pt")


def test_recognizer_component_checkpoint(tmp_path):
    trainer = make_trainer()
    path = tmp_path / "rec.pt"
    save_recognizer_checkpoint(trainer.recognizer, CODEC, path, iteration=7)
    rec, codec, state = recognizer_from_checkpoint(path)
    assert state["kind"] == "recognizer"
    assert state["iteration"] == 7
    assert codec.chars == CODEC.chars
    img = torch.rand(1, 1, 128, 512)
    trainer.recognizer.eval()
    rec.eval()
    assert torch.equal(rec(img), trainer.recognizer(img))
    # a recognizer checkpoint is not loadable as a full gan trainer
    with pytest.raises(CheckpointError, match="gan"):
        trainer_from_checkpoint(path)
