"""Image preprocessing, dataset manifests, and mini-batch iteration.

Word images are isometrically scaled to a height of 128 pixels, dropped when
the scaled width exceeds 512, padded with white to 512 columns (on the right
for left-to-right scripts, on the left otherwise), and normalized to [-1, 1]
with white mapping to +1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
from PIL import Image

from .codec import CharCodec

IMAGE_HEIGHT = 128
IMAGE_WIDTH = 512
WHITE_LEVEL = 255  # 8-bit white; becomes +1 after normalization

PAD_SIDES = ("right", "left")


class ManifestError(ValueError):
    """Missing image file, unparsable manifest line, or codec mismatch."""


@dataclass(frozen=True)
class WordImageSample:
    """A normalized 1x128x512 image with its transcript and label sequence."""

    pixels: torch.Tensor  # (1, 128, 512) float32 in [-1, 1]
    transcript: str
    labels: torch.Tensor  # (L,) int64
    source: str  # "real" | "generated"


@dataclass
class Batch:
    images: torch.Tensor  # (B, 1, 128, 512)
    transcripts: list[str]
    labels: list[torch.Tensor]
    source: str

    def __len__(self) -> int:
        return self.images.shape[0]


@dataclass
class DatasetManifest:
    entries: list[tuple[Path, str]]
    pad_side: str = "right"

    def __len__(self) -> int:
        return len(self.entries)


def scaled_width(height: int, width: int) -> int:
    """Width after isometric scaling to height 128 (before any padding)."""
    return int(round(width * IMAGE_HEIGHT / height))


def preprocess_image(raw: np.ndarray, pad_side: str = "right") -> np.ndarray | None:
    """Scale, pad, and normalize one grayscale image; ``None`` means rejected.

    ``raw`` is an (H, W) uint8 array with a white background. The image is
    scaled by 128/H in both dimensions (bilinear); images whose scaled width
    exceeds 512 are rejected and dropped by the caller. Accepted images are
    padded with white on ``pad_side`` and mapped to [-1, 1].
    """
    if pad_side not in PAD_SIDES:
        raise ValueError(f"pad_side must be one of {PAD_SIDES}, got {pad_side!r}")
    if raw.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale array, got shape {raw.shape}")
    h, w = raw.shape
    if h < 1 or w < 1:
        raise ValueError(f"degenerate image shape {raw.shape}")

    new_w = scaled_width(h, w)
    if new_w > IMAGE_WIDTH:
        return None
    if (h, w) != (IMAGE_HEIGHT, new_w):
        img = Image.fromarray(raw, mode="L").resize((new_w, IMAGE_HEIGHT), Image.BILINEAR)
        raw = np.asarray(img)

    pad = IMAGE_WIDTH - new_w
    if pad > 0:
        fill = np.full((IMAGE_HEIGHT, pad), WHITE_LEVEL, dtype=raw.dtype)
        parts = (raw, fill) if pad_side == "right" else (fill, raw)
        raw = np.concatenate(parts, axis=1)

    out = raw.astype(np.float32) / (WHITE_LEVEL / 2.0) - 1.0
    return out[None, :, :]


def load_image(path: str | Path) -> np.ndarray:
    """Read a PNG (single-channel or RGB) as grayscale uint8 via luma weighting."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L"))


def image_to_png(pixels: torch.Tensor | np.ndarray, path: str | Path) -> None:
    """Write a normalized [-1, 1] image as 8-bit grayscale PNG."""
    arr = pixels.detach().cpu().numpy() if isinstance(pixels, torch.Tensor) else pixels
    arr = np.squeeze(arr)
    if arr.ndim != 2:
        raise ValueError(f"expected one image plane, got shape {arr.shape}")
    arr = np.clip((arr + 1.0) * (WHITE_LEVEL / 2.0), 0, WHITE_LEVEL)
    Image.fromarray(arr.round().astype(np.uint8), mode="L").save(path)


def load_manifest(
    path: str | Path,
    codec: CharCodec | None = None,
    pad_side: str = "right",
) -> DatasetManifest:
    """Parse a tab-separated ``image_path<TAB>transcript`` manifest.

    Relative image paths are resolved against the manifest directory. Every
    referenced file must exist, and with a ``codec`` every transcript must be
    encodable; both are checked here so failures name the offending line.
    """
    path = Path(path)
    if pad_side not in PAD_SIDES:
        raise ManifestError(f"pad_side must be one of {PAD_SIDES}, got {pad_side!r}")
    entries: list[tuple[Path, str]] = []
    with path.open(encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ManifestError(f"{path}:{i}: expected image_path<TAB>transcript")
            img_str, _, transcript = line.partition("\t")
            if not img_str or not transcript:
                raise ManifestError(f"{path}:{i}: empty image path or transcript")
            img_path = Path(img_str)
            if not img_path.is_absolute():
                img_path = path.parent / img_path
            if not img_path.is_file():
                raise ManifestError(f"{path}:{i}: missing image file {img_path}")
            if codec is not None and not codec.encodable(transcript):
                bad = next(c for c in transcript if c not in codec)
                raise ManifestError(
                    f"{path}:{i}: transcript {transcript!r} has out-of-codec character {bad!r}"
                )
            entries.append((img_path, transcript))
    return DatasetManifest(entries=entries, pad_side=pad_side)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    lines = [f"{img_path}\t{transcript}\n" for img_path, transcript in manifest.entries]
    Path(path).write_text("".join(lines), encoding="utf-8")


@dataclass
class LoadStats:
    accepted: int = 0
    rejected: int = 0


class WordImageDataset:
    """Accepted samples of a manifest, with lazy image loading.

    Over-width entries (scaled width > 512) are filtered out up front by
    probing image headers; accepted/rejected counts are reported in
    ``stats`` so nothing is dropped silently. Samples are immutable after
    construction, so the dataset is safe to share with a concurrent batch
    producer.
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        codec: CharCodec,
        cache_images: bool = False,
    ):
        self.codec = codec
        self.pad_side = manifest.pad_side
        self.stats = LoadStats()
        self.entries: list[tuple[Path, str]] = []
        for img_path, transcript in manifest.entries:
            with Image.open(img_path) as img:
                w, h = img.size
            if scaled_width(h, w) > IMAGE_WIDTH:
                self.stats.rejected += 1
            else:
                self.stats.accepted += 1
                self.entries.append((img_path, transcript))
        self._cache: dict[int, torch.Tensor] | None = {} if cache_images else None

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int) -> WordImageSample:
        img_path, transcript = self.entries[index]
        if self._cache is not None and index in self._cache:
            pixels = self._cache[index]
        else:
            arr = preprocess_image(load_image(img_path), self.pad_side)
            if arr is None:  # width changed on disk since the header probe
                raise ManifestError(f"image {img_path} no longer fits after scaling")
            pixels = torch.from_numpy(arr)
            if self._cache is not None:
                self._cache[index] = pixels
        return WordImageSample(
            pixels=pixels,
            transcript=transcript,
            labels=self.codec.encode_tensor(transcript),
            source="real",
        )

    def batch(self, indices: Sequence[int]) -> Batch:
        samples = [self[i] for i in indices]
        return Batch(
            images=torch.stack([s.pixels for s in samples]),
            transcripts=[s.transcript for s in samples],
            labels=[s.labels for s in samples],
            source="real",
        )


def epoch_permutation(n: int, seed: int, epoch: int) -> torch.Tensor:
    """Deterministic shuffle for one epoch, reproducible for mid-epoch resume."""
    g = torch.Generator().manual_seed((seed * 1_000_003 + epoch) % 2**63)
    return torch.randperm(n, generator=g)


def iterate_batches(
    dataset: WordImageDataset,
    batch_size: int,
    seed: int = 0,
    epoch: int = 0,
) -> Iterator[Batch]:
    """Yield one epoch of shuffled, full-size batches (remainder dropped)."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    perm = epoch_permutation(len(dataset), seed, epoch)
    for start in range(0, len(dataset) - batch_size + 1, batch_size):
        yield dataset.batch(perm[start : start + batch_size].tolist())


@dataclass
class BatchStream:
    """Resumable infinite stream of real batches, one shuffled epoch at a time.

    ``epoch``/``cursor`` capture the position exactly, so a checkpointed
    trainer continues with the same batch order it would have seen
    uninterrupted. The consumer sees each batch exactly once.
    """

    dataset: WordImageDataset
    batch_size: int
    seed: int = 0
    epoch: int = 0
    cursor: int = 0  # next batch index within the epoch
    _perm: torch.Tensor | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if len(self.dataset) < self.batch_size:
            raise ValueError(
                f"dataset has {len(self.dataset)} samples, fewer than one "
                f"batch of {self.batch_size}"
            )

    @property
    def batches_per_epoch(self) -> int:
        return len(self.dataset) // self.batch_size

    def next_batch(self) -> Batch:
        if self.cursor >= self.batches_per_epoch:
            self.epoch += 1
            self.cursor = 0
            self._perm = None
        if self._perm is None:
            self._perm = epoch_permutation(len(self.dataset), self.seed, self.epoch)
        start = self.cursor * self.batch_size
        indices = self._perm[start : start + self.batch_size].tolist()
        self.cursor += 1
        return self.dataset.batch(indices)

    def position(self) -> tuple[int, int]:
        return (self.epoch, self.cursor)

    def seek(self, epoch: int, cursor: int) -> None:
        self.epoch = epoch
        self.cursor = cursor
        self._perm = None
