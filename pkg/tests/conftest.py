import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from _toydata import make_corpus

from scribegan.codec import CharCodec, load_codec, load_lexicon
from scribegan.data import WordImageDataset, load_manifest


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(1234)


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """A small rendered corpus shared across the suite (40 images, 20 words)."""
    root = tmp_path_factory.mktemp("toy_corpus")
    from _toydata import WORDS

    paths = make_corpus(root, n_images=40, words=WORDS[:20], seed=7)
    codec = load_codec(paths["codec"])
    manifest = load_manifest(paths["manifest"], codec)
    dataset = WordImageDataset(manifest, codec, cache_images=True)
    lexicon = load_lexicon(paths["lexicon"], codec)
    return {
        "paths": paths,
        "codec": codec,
        "manifest": manifest,
        "dataset": dataset,
        "lexicon": lexicon,
    }


@pytest.fixture(scope="session")
def small_codec():
    return CharCodec(list("abcdefghij"))
