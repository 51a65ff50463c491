"""Evaluation: FID with a pluggable feature extractor, character edit
distance, word error rate, sample grids, and the data-augmentation harness.

The default desk-scale FID extractor is the recognizer's convolutional
encoder (pre-pooling activations, globally averaged). FID values are only
comparable within a single ``extractor_id``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .codec import CharCodec, CodecError, Lexicon
from .data import (
    DatasetManifest,
    WordImageDataset,
    image_to_png,
    iterate_batches,
    save_manifest,
)
from .recognizer import Recognizer, ctc_loss_batch, greedy_decode

COV_REGULARIZATION = 1e-6
PSD_TOLERANCE = 1e-6


@dataclass(frozen=True)
class FeatureSet:
    features: np.ndarray  # (N, F)
    extractor_id: str

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError(f"features must be (N, F), got shape {self.features.shape}")


@dataclass(frozen=True)
class RecognitionReport:
    edit_distance: float  # mean per-character Levenshtein cost x100
    wer: float  # percentage of words with any error
    n_words: int


def frechet_distance(
    mu1: np.ndarray, cov1: np.ndarray, mu2: np.ndarray, cov2: np.ndarray
) -> float:
    """||mu1 - mu2||^2 + Tr(C1 + C2 - 2 (C1 C2)^(1/2)) for symmetric PSD inputs.

    The square-root trace is computed from the eigendecomposition of the
    symmetrized product sqrt(C1) C2 sqrt(C1).
    """
    diff = mu1 - mu2
    cov1 = cov1 + COV_REGULARIZATION * np.eye(cov1.shape[0])
    cov2 = cov2 + COV_REGULARIZATION * np.eye(cov2.shape[0])

    vals1, vecs1 = np.linalg.eigh(cov1)
    if vals1.min() < -PSD_TOLERANCE:
        raise ValueError(f"covariance is not PSD (min eigenvalue {vals1.min():.3e})")
    sqrt1 = (vecs1 * np.sqrt(np.clip(vals1, 0.0, None))) @ vecs1.T

    inner = sqrt1 @ cov2 @ sqrt1
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    if vals.min() < -PSD_TOLERANCE * max(1.0, float(vals.max())):
        raise ValueError(f"product matrix is not PSD (min eigenvalue {vals.min():.3e})")
    trace_sqrt = float(np.sqrt(np.clip(vals, 0.0, None)).sum())
    return float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * trace_sqrt)


def fid(real: FeatureSet, fake: FeatureSet) -> float:
    """Fréchet distance between Gaussian fits of two feature sets."""
    if real.extractor_id != fake.extractor_id:
        raise ValueError(
            f"extractor mismatch: {real.extractor_id!r} vs {fake.extractor_id!r}"
        )
    for name, fs in (("real", real), ("fake", fake)):
        if fs.features.shape[0] < 2:
            raise ValueError(f"{name} feature set needs at least 2 rows")
    mu_r = real.features.mean(axis=0)
    mu_f = fake.features.mean(axis=0)
    cov_r = np.cov(real.features, rowvar=False).reshape(real.features.shape[1], -1)
    cov_f = np.cov(fake.features, rowvar=False).reshape(fake.features.shape[1], -1)
    return frechet_distance(mu_r, cov_r, mu_f, cov_f)


def recognizer_features(
    recognizer: Recognizer, images: torch.Tensor, batch_size: int = 32
) -> np.ndarray:
    """Globally averaged pre-pooling encoder activations, (N, C)."""
    recognizer.eval()
    out = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            feats = recognizer.encode(images[start : start + batch_size])
            out.append(feats.mean(dim=(2, 3)).cpu().numpy())
    return np.concatenate(out, axis=0)


def extract_feature_set(
    recognizer: Recognizer, images: torch.Tensor, extractor_id: str = "recognizer-encoder"
) -> FeatureSet:
    return FeatureSet(recognizer_features(recognizer, images), extractor_id)


def edit_distance(hyp: str, ref: str) -> int:
    """Minimal number of character insertions, deletions, and substitutions."""
    if hyp == ref:
        return 0
    if not hyp:
        return len(ref)
    if not ref:
        return len(hyp)
    prev = list(range(len(ref) + 1))
    for i, hc in enumerate(hyp, start=1):
        cur = [i] + [0] * len(ref)
        for j, rc in enumerate(ref, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (hc != rc))
        prev = cur
    return prev[-1]


def recognition_report(pairs: list[tuple[str, str]]) -> RecognitionReport:
    """Aggregate (hypothesis, reference) pairs into ED x100 and WER."""
    if not pairs:
        raise ValueError("cannot build a report from zero words")
    total_edits = sum(edit_distance(h, r) for h, r in pairs)
    total_chars = sum(len(r) for _, r in pairs)
    wrong = sum(1 for h, r in pairs if h != r)
    ed = 100.0 * total_edits / max(total_chars, 1)
    return RecognitionReport(
        edit_distance=ed, wer=100.0 * wrong / len(pairs), n_words=len(pairs)
    )


def evaluate_recognizer(
    recognizer: Recognizer,
    dataset: WordImageDataset,
    codec: CharCodec,
    batch_size: int = 32,
) -> RecognitionReport:
    """Greedy-decode every dataset image and score against its transcript."""
    if codec != dataset.codec:
        raise CodecError("dataset codec does not match the recognizer's codec")
    recognizer.eval()
    pairs: list[tuple[str, str]] = []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            batch = dataset.batch(range(start, min(start + batch_size, len(dataset))))
            hyps = greedy_decode(recognizer(batch.images), codec)
            pairs.extend(zip(hyps, batch.transcripts))
    return recognition_report(pairs)


def sample_grid(images: torch.Tensor, path: str | Path, columns: int = 4) -> None:
    """Write a contact sheet of generated images as one PNG."""
    arr = ((images.detach().cpu().numpy() + 1.0) * 127.5).clip(0, 255).astype(np.uint8)
    n, _, h, w = arr.shape
    columns = min(columns, n)
    rows = math.ceil(n / columns)
    sheet = np.full((rows * h, columns * w), 255, dtype=np.uint8)
    for i in range(n):
        r, c = divmod(i, columns)
        sheet[r * h : (r + 1) * h, c * w : (c + 1) * w] = arr[i, 0]
    Image.fromarray(sheet, mode="L").save(path)


def _safe_filename(word: str, max_len: int = 32) -> str:
    cleaned = "".join(c if (c.isalnum() or c in "-_") else "-" for c in word)
    return cleaned[:max_len] or "word"


def export_augmented_set(
    trainer,
    lexicon: Lexicon,
    count: int,
    out_dir: str | Path,
    real_manifest: DatasetManifest,
    rng: torch.Generator | None = None,
    batch_size: int = 16,
) -> DatasetManifest:
    """Write ``count`` generated word images and a manifest mixing real and
    generated entries for downstream recognizer training."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lexicon.validate(trainer.codec)
    entries = list(real_manifest.entries)
    written = 0
    while written < count:
        n = min(batch_size, count - written)
        words = lexicon.sample_batch(rng or trainer.sample_rng, n)
        images = trainer.generate(words, rng=rng)
        for word, image in zip(words, images):
            name = f"gen_{written:06d}_{_safe_filename(word)}.png"
            image_to_png(image, out_dir / name)
            entries.append((out_dir / name, word))
            written += 1
    manifest = DatasetManifest(entries=entries, pad_side=real_manifest.pad_side)
    save_manifest(manifest, out_dir / "augmented_manifest.tsv")
    return manifest


def train_recognizer(
    dataset: WordImageDataset,
    codec: CharCodec,
    max_iters: int,
    val_dataset: WordImageDataset | None = None,
    lr: float = 1e-4,
    batch_size: int = 16,
    seed: int = 0,
    eval_every: int = 500,
    patience: int = 5,
    log_every: int = 0,
) -> tuple[Recognizer, list[dict[str, float]]]:
    """Train a standalone recognizer with RMSprop and CTC.

    With a validation set, training stops early once the validation edit
    distance has not improved for ``patience`` evaluations; the
    best-so-far weights are restored at the end.
    """
    torch.manual_seed(seed)
    recognizer = Recognizer(codec.vocab_size)
    optimizer = torch.optim.RMSprop(recognizer.parameters(), lr=lr)
    history: list[dict[str, float]] = []
    best_ed = float("inf")
    best_state = None
    stale = 0
    iteration = 0
    epoch = 0
    while iteration < max_iters:
        for batch in iterate_batches(dataset, batch_size, seed=seed, epoch=epoch):
            recognizer.train()
            logits = recognizer(batch.images)
            loss = ctc_loss_batch(logits, batch.labels, codec.blank_index).mean()
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(recognizer.parameters(), 10.0)
            optimizer.step()
            iteration += 1
            entry = {"iteration": iteration, "loss": float(loss.detach())}
            if log_every and iteration % log_every == 0:
                print(f"iter {iteration}: ctc loss {float(loss):.4f}")
            if val_dataset is not None and iteration % eval_every == 0:
                report = evaluate_recognizer(recognizer, val_dataset, codec)
                entry["val_ed"] = report.edit_distance
                entry["val_wer"] = report.wer
                if report.edit_distance < best_ed:
                    best_ed = report.edit_distance
                    best_state = {
                        k: v.detach().clone() for k, v in recognizer.state_dict().items()
                    }
                    stale = 0
                else:
                    stale += 1
            history.append(entry)
            if iteration >= max_iters or (val_dataset is not None and stale >= patience):
                break
        else:
            epoch += 1
            continue
        break
    if best_state is not None:
        recognizer.load_state_dict(best_state)
    return recognizer, history
