"""Training engine: step orchestration, optimizers, spectral-norm upkeep,
gradient clipping, and single-file checkpoints.

Each iteration runs one discriminator step (one real batch and one generated
batch), one recognizer step (real data only), and one generator step, in
that order. The generator step combines the discriminator's and the
recognizer's gradients with respect to the fake images, balancing the
latter before backpropagating through the generator and text encoder only.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from itertools import chain
from pathlib import Path

import torch
import torch.nn.utils

from .codec import CharCodec, Lexicon
from .data import Batch, BatchStream, WordImageDataset
from .discriminator import Discriminator
from .generator import NOISE_DIM, Generator
from .losses import (
    GradientBalanceReport,
    adversarial_g_loss,
    balance_report,
    d_loss_terms,
)
from .recognizer import Recognizer, ctc_loss_batch
from .spectral import refresh_spectral_
from .text_encoder import COND_DIM, TextEncoder

CHECKPOINT_VERSION = 1

METRIC_FIELDS = (
    "iteration",
    "loss_D",
    "loss_R",
    "loss_G_adv",
    "loss_G_ctc",
    "norm_ratio",
    "sigma_ratio",
)


class NaNLossError(RuntimeError):
    """A training loss went non-finite; the run must abort, not limp on."""


class CheckpointError(RuntimeError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


@dataclass
class TrainConfig:
    alpha: float | None = 1.0  # None disables gradient balancing
    adv_loss: str = "hinge"
    self_attention: bool = True
    conditioning: str = "cbn"
    lr: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.999
    batch_size: int = 64
    clip_norm: float = 10.0
    rec_channels: tuple[int, ...] = (32, 64, 128, 128, 128)
    rec_v_strides: tuple[int, ...] = (2, 2, 2, 2, 2)
    rec_h_strides: tuple[int, ...] = (1, 1, 2, 2, 1)

    # Fields that must match between a checkpoint and the trainer loading it.
    ARCHITECTURE_FIELDS = (
        "self_attention",
        "conditioning",
        "rec_channels",
        "rec_v_strides",
        "rec_h_strides",
    )


def _require_finite(value: torch.Tensor, what: str) -> None:
    if not torch.isfinite(value).all():
        raise NaNLossError(f"{what} is non-finite")


def pad_labels(labels: list[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
    lengths = torch.tensor([len(l) for l in labels], dtype=torch.long)
    padded = torch.zeros(len(labels), int(lengths.max()), dtype=torch.long)
    for i, seq in enumerate(labels):
        padded[i, : len(seq)] = seq
    return padded, lengths


class Trainer:
    """Owns the four networks, their optimizers, and all sampling randomness.

    The trainer is the single writer of all parameters; forward evaluation
    on a frozen trainer is reentrant. ``dataset`` and ``lexicon`` may be
    omitted for inference-only use (generation, evaluation).
    """

    def __init__(
        self,
        codec: CharCodec,
        config: TrainConfig | None = None,
        dataset: WordImageDataset | None = None,
        lexicon: Lexicon | None = None,
        seed: int = 0,
        spectral_sweeps: int = 150,
    ):
        self.codec = codec
        self.config = config or TrainConfig()
        self.seed = seed
        self.spectral_sweeps = spectral_sweeps
        torch.manual_seed(seed)  # deterministic weight init
        self.text_encoder = TextEncoder(codec.vocab_size)
        self.generator = Generator(
            cond_dim=COND_DIM,
            self_attention=self.config.self_attention,
            conditioning=self.config.conditioning,
        )
        self.discriminator = Discriminator(self_attention=self.config.self_attention)
        self.recognizer = Recognizer(
            codec.vocab_size,
            channels=self.config.rec_channels,
            v_strides=self.config.rec_v_strides,
            h_strides=self.config.rec_h_strides,
        )
        betas = (self.config.beta1, self.config.beta2)
        self.opt_g = torch.optim.Adam(
            chain(self.generator.parameters(), self.text_encoder.parameters()),
            lr=self.config.lr,
            betas=betas,
        )
        self.opt_d = torch.optim.Adam(
            self.discriminator.parameters(), lr=self.config.lr, betas=betas
        )
        self.opt_r = torch.optim.Adam(
            self.recognizer.parameters(), lr=self.config.lr, betas=betas
        )
        self.sample_rng = torch.Generator().manual_seed(seed)
        self.lexicon = lexicon
        self.stream = (
            BatchStream(dataset, self.config.batch_size, seed=seed)
            if dataset is not None
            else None
        )
        self.iteration = 0
        self.r_step_sources: list[str] = []  # isolation instrumentation

    # ------------------------------------------------------------------ steps

    def _check_batch(self, batch: Batch, expected_source: str) -> None:
        if batch.source != expected_source:
            raise ValueError(f"expected a {expected_source} batch, got {batch.source!r}")
        if len(batch) != self.config.batch_size:
            raise ValueError(
                f"batch has {len(batch)} samples, configured size is {self.config.batch_size}"
            )

    def train_step_d(self, real_batch: Batch, fake_batch: Batch) -> dict[str, float]:
        self._check_batch(real_batch, "real")
        self._check_batch(fake_batch, "generated")
        self.discriminator.train()
        real_scores = self.discriminator(real_batch.images)
        fake_scores = self.discriminator(fake_batch.images.detach())
        real_term, fake_term = d_loss_terms(real_scores, fake_scores, self.config.adv_loss)
        loss = real_term + fake_term
        _require_finite(loss, "discriminator loss")
        self.opt_d.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(
            self.discriminator.parameters(), self.config.clip_norm
        )
        self.opt_d.step()
        refresh_spectral_(self.discriminator, max_sweeps=self.spectral_sweeps)
        return {
            "loss_D": float(loss.detach()),
            "loss_D_real": float(real_term.detach()),
            "loss_D_fake": float(fake_term.detach()),
        }

    def train_step_r(self, real_batch: Batch) -> dict[str, float]:
        if real_batch.source != "real":
            raise ValueError(
                "recognizer training accepts real batches only, got "
                f"{real_batch.source!r}"
            )
        self._check_batch(real_batch, "real")
        self.recognizer.train()
        logits = self.recognizer(real_batch.images)
        loss = ctc_loss_batch(logits, real_batch.labels, self.codec.blank_index).mean()
        _require_finite(loss, "recognizer CTC loss")
        self.opt_r.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(self.recognizer.parameters(), self.config.clip_norm)
        self.opt_r.step()
        self.r_step_sources.append(real_batch.source)
        return {"loss_R": float(loss.detach())}

    def train_step_g(self, words: list[str]) -> tuple[dict[str, float], GradientBalanceReport]:
        """Adam step on (generator, text encoder) from the combined image gradient.

        Discriminator and recognizer parameters receive no gradient and no
        update here; only their forward passes are consumed.
        """
        if len(words) != self.config.batch_size:
            raise ValueError(f"{len(words)} words for configured batch {self.config.batch_size}")
        labels = [self.codec.encode_tensor(w) for w in words]
        padded, lengths = pad_labels(labels)
        self.text_encoder.train()
        self.generator.train()
        z = torch.randn(len(words), NOISE_DIM, generator=self.sample_rng)
        _, cond = self.text_encoder(padded, lengths)
        fake = self.generator(z, cond)

        # Gradients of the two objectives with respect to the fake images.
        fake_d = fake.detach().requires_grad_(True)
        g_adv = adversarial_g_loss(self.discriminator(fake_d), self.config.adv_loss)
        _require_finite(g_adv, "generator adversarial loss")
        (grad_d,) = torch.autograd.grad(g_adv, fake_d)

        fake_r = fake.detach().requires_grad_(True)
        logits = self.recognizer(fake_r)
        g_ctc = ctc_loss_batch(logits, labels, self.codec.blank_index).mean()
        _require_finite(g_ctc, "generator CTC loss")
        (grad_r,) = torch.autograd.grad(g_ctc, fake_r)

        report = balance_report(grad_r, grad_d, self.config.alpha)
        self.opt_g.zero_grad(set_to_none=True)
        fake.backward(gradient=grad_d + report.balanced)
        self.opt_g.step()
        refresh_spectral_(self.generator, max_sweeps=self.spectral_sweeps)
        metrics = {
            "loss_G_adv": float(g_adv.detach()),
            "loss_G_ctc": float(g_ctc.detach()),
            "norm_ratio": report.norm_ratio,
            "sigma_ratio": report.sigma_ratio,
        }
        return metrics, report

    def make_fake_batch(self, words: list[str]) -> Batch:
        """Generate a detached batch of fake images for discriminator training."""
        with torch.no_grad():
            z = torch.randn(len(words), NOISE_DIM, generator=self.sample_rng)
            labels = [self.codec.encode_tensor(w) for w in words]
            padded, lengths = pad_labels(labels)
            self.text_encoder.train()
            self.generator.train()
            _, cond = self.text_encoder(padded, lengths)
            images = self.generator(z, cond)
        return Batch(images=images, transcripts=list(words), labels=labels, source="generated")

    def sample_words(self, k: int) -> list[str]:
        if self.lexicon is None:
            raise RuntimeError("trainer has no lexicon to sample words from")
        return self.lexicon.sample_batch(self.sample_rng, k)

    def run_iteration(self) -> dict[str, float]:
        """One D step, one R step, one (G, phi) step, in that order."""
        if self.stream is None:
            raise RuntimeError("trainer has no dataset; cannot run training iterations")
        batch_size = self.config.batch_size
        real_d = self.stream.next_batch()
        fake = self.make_fake_batch(self.sample_words(batch_size))
        metrics = self.train_step_d(real_d, fake)
        metrics.update(self.train_step_r(self.stream.next_batch()))
        g_metrics, _ = self.train_step_g(self.sample_words(batch_size))
        metrics.update(g_metrics)
        self.iteration += 1
        metrics["iteration"] = self.iteration
        return metrics

    # ------------------------------------------------------------- inference

    def generate(
        self,
        words: list[str],
        z: torch.Tensor | None = None,
        rng: torch.Generator | None = None,
        chunk_size: int = 16,
    ) -> torch.Tensor:
        """Render one image per word with frozen parameters (eval mode).

        Work proceeds in chunks of ``chunk_size`` words to bound the memory
        of the full-resolution feature maps.
        """
        if z is None:
            z = torch.randn(len(words), NOISE_DIM, generator=rng or self.sample_rng)
        if z.shape[0] != len(words):
            raise ValueError(f"{z.shape[0]} noise rows for {len(words)} words")
        self.text_encoder.eval()
        self.generator.eval()
        out = []
        with torch.no_grad():
            for start in range(0, len(words), chunk_size):
                chunk = words[start : start + chunk_size]
                padded, lengths = pad_labels([self.codec.encode_tensor(w) for w in chunk])
                _, cond = self.text_encoder(padded, lengths)
                out.append(self.generator(z[start : start + len(chunk)], cond))
        return torch.cat(out)

    # ----------------------------------------------------------- persistence

    def state_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "kind": "gan",
            "iteration": self.iteration,
            "codec_chars": list(self.codec.chars),
            "config": dataclasses.asdict(self.config),
            "models": {
                "text_encoder": self.text_encoder.state_dict(),
                "generator": self.generator.state_dict(),
                "discriminator": self.discriminator.state_dict(),
                "recognizer": self.recognizer.state_dict(),
            },
            "optimizers": {
                "g": self.opt_g.state_dict(),
                "d": self.opt_d.state_dict(),
                "r": self.opt_r.state_dict(),
            },
            "sample_rng": self.sample_rng.get_state(),
            "data_position": self.stream.position() if self.stream else None,
        }

    def save_checkpoint(self, path: str | Path) -> None:
        torch.save(self.state_dict(), path)

    def load_checkpoint(self, path: str | Path) -> None:
        """Restore parameters, optimizer moments, rng, and data position."""
        state = read_checkpoint(path)
        if state.get("kind") != "gan":
            raise CheckpointError(f"expected a gan checkpoint, found kind={state.get('kind')!r}")
        if state["codec_chars"] != list(self.codec.chars):
            raise CheckpointError(
                "field codec_chars: checkpoint alphabet has "
                f"{len(state['codec_chars'])} characters, trainer codec has "
                f"{self.codec.vocab_size}"
            )
        saved_cfg = state["config"]
        for field_name in TrainConfig.ARCHITECTURE_FIELDS:
            ours = getattr(self.config, field_name)
            theirs = saved_cfg.get(field_name)
            if isinstance(ours, tuple):
                theirs = tuple(theirs)
            if ours != theirs:
                raise CheckpointError(
                    f"field {field_name}: checkpoint has {theirs!r}, trainer has {ours!r}"
                )
        self.text_encoder.load_state_dict(state["models"]["text_encoder"])
        self.generator.load_state_dict(state["models"]["generator"])
        self.discriminator.load_state_dict(state["models"]["discriminator"])
        self.recognizer.load_state_dict(state["models"]["recognizer"])
        self.opt_g.load_state_dict(state["optimizers"]["g"])
        self.opt_d.load_state_dict(state["optimizers"]["d"])
        self.opt_r.load_state_dict(state["optimizers"]["r"])
        self.sample_rng.set_state(state["sample_rng"])
        if self.stream is not None and state["data_position"] is not None:
            self.stream.seek(*state["data_position"])
        self.iteration = state["iteration"]


def run_training(
    trainer: Trainer,
    out_dir: str | Path,
    max_iters: int,
    checkpoint_every: int = 0,
    fid_every: int = 0,
    grid_every: int = 0,
    fid_count: int = 256,
    grid_words: list[str] | None = None,
) -> Path:
    """Drive the step schedule to ``max_iters`` with periodic artifacts.

    Emits a per-iteration metrics CSV, periodic checkpoints, periodic
    desk-scale FID (recognizer-encoder features), and periodic sample
    grids. On a non-finite loss the state is dumped for diagnosis and the
    error propagates.
    """
    from .evaluation import extract_feature_set, fid, sample_grid

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.csv"
    fresh = trainer.iteration == 0 or not metrics_path.exists()
    with metrics_path.open("w" if fresh else "a", encoding="utf-8") as metrics_file:
        if fresh:
            metrics_file.write(",".join(METRIC_FIELDS) + "\n")
        try:
            while trainer.iteration < max_iters:
                metrics = trainer.run_iteration()
                row = ",".join(_format_metric(metrics.get(k)) for k in METRIC_FIELDS)
                metrics_file.write(row + "\n")
                metrics_file.flush()
                it = trainer.iteration
                if checkpoint_every and it % checkpoint_every == 0:
                    trainer.save_checkpoint(out_dir / f"ckpt_{it:07d}.pt")
                # Cadence events draw from their own rng so that resuming from
                # a checkpoint replays the exact same training stream.
                if fid_every and it % fid_every == 0:
                    _log_fid(trainer, out_dir, fid_count, fid=fid, extract=extract_feature_set)
                if grid_every and it % grid_every == 0:
                    rng = torch.Generator().manual_seed(trainer.seed * 31 + it)
                    words = grid_words or trainer.lexicon.sample_batch(rng, 8)
                    sample_grid(trainer.generate(words, rng=rng), out_dir / f"grid_{it:07d}.png")
        except NaNLossError:
            trainer.save_checkpoint(out_dir / "nan_dump.pt")
            raise
        trainer.save_checkpoint(out_dir / f"ckpt_{trainer.iteration:07d}.pt")
    return metrics_path


def _format_metric(value) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return f"{value:.6g}"


def _log_fid(trainer: Trainer, out_dir: Path, fid_count: int, fid, extract) -> None:
    it = trainer.iteration
    rng = torch.Generator().manual_seed(trainer.seed * 31 + it + 1)
    dataset = trainer.stream.dataset
    n = min(fid_count, len(dataset))
    real_images = dataset.batch(range(n)).images
    fake_images = trainer.generate(trainer.lexicon.sample_batch(rng, n), rng=rng)
    extractor_id = f"recognizer-encoder@{it}"
    value = fid(
        extract(trainer.recognizer, real_images, extractor_id),
        extract(trainer.recognizer, fake_images, extractor_id),
    )
    fid_path = out_dir / "fid_log.csv"
    if not fid_path.exists():
        fid_path.write_text("iteration,fid,extractor_id\n", encoding="utf-8")
    with fid_path.open("a", encoding="utf-8") as fh:
        fh.write(f"{it},{value:.6g},{extractor_id}\n")


def read_checkpoint(path: str | Path) -> dict:
    """Load and version-check a checkpoint container."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} does not exist")
    try:
        state = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"checkpoint {path} is corrupt or unreadable: {exc}") from exc
    if not isinstance(state, dict) or "version" not in state:
        raise CheckpointError(f"checkpoint {path} has no version field")
    if state["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {state['version']} is not supported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    return state


def trainer_from_checkpoint(
    path: str | Path,
    dataset: WordImageDataset | None = None,
    lexicon: Lexicon | None = None,
) -> Trainer:
    """Rebuild a trainer (codec, config, and all state) from a checkpoint file."""
    state = read_checkpoint(path)
    if state.get("kind") != "gan":
        raise CheckpointError(f"expected a gan checkpoint, found kind={state.get('kind')!r}")
    codec = CharCodec(state["codec_chars"])
    cfg_dict = dict(state["config"])
    for key in ("rec_channels", "rec_v_strides", "rec_h_strides"):
        cfg_dict[key] = tuple(cfg_dict[key])
    trainer = Trainer(codec, TrainConfig(**cfg_dict), dataset=dataset, lexicon=lexicon)
    trainer.load_checkpoint(path)
    return trainer


def save_recognizer_checkpoint(
    recognizer: Recognizer,
    codec: CharCodec,
    path: str | Path,
    iteration: int = 0,
    config: TrainConfig | None = None,
) -> None:
    """Persist a standalone recognizer in the unified checkpoint container."""
    config = config or TrainConfig()
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "kind": "recognizer",
            "iteration": iteration,
            "codec_chars": list(codec.chars),
            "config": dataclasses.asdict(config),
            "models": {"recognizer": recognizer.state_dict()},
        },
        path,
    )


def recognizer_from_checkpoint(path: str | Path) -> tuple[Recognizer, CharCodec, dict]:
    """Load a recognizer (from either checkpoint kind) with its codec."""
    state = read_checkpoint(path)
    if "recognizer" not in state.get("models", {}):
        raise CheckpointError(f"checkpoint {path} contains no recognizer component")
    codec = CharCodec(state["codec_chars"])
    cfg = state["config"]
    recognizer = Recognizer(
        codec.vocab_size,
        channels=tuple(cfg["rec_channels"]),
        v_strides=tuple(cfg["rec_v_strides"]),
        h_strides=tuple(cfg["rec_h_strides"]),
    )
    recognizer.load_state_dict(state["models"]["recognizer"])
    return recognizer, codec, state
