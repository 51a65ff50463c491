"""scribegan: adversarial synthesis of handwritten word images conditioned on
character sequences, with an auxiliary CTC recognizer for content control."""

from .codec import CharCodec, CodecError, Lexicon, build_codec, load_codec, load_lexicon, save_codec
from .data import (
    Batch,
    BatchStream,
    DatasetManifest,
    ManifestError,
    WordImageDataset,
    WordImageSample,
    iterate_batches,
    load_manifest,
    preprocess_image,
    save_manifest,
)
from .discriminator import Discriminator
from .evaluation import (
    FeatureSet,
    RecognitionReport,
    edit_distance,
    evaluate_recognizer,
    export_augmented_set,
    fid,
    train_recognizer,
)
from .generator import Generator, split_noise
from .losses import (
    DegenerateGradientError,
    GradientBalanceReport,
    adversarial_g_loss,
    balance_gradients,
    hinge_d_loss,
)
from .recognizer import Recognizer, ctc_loss, ctc_loss_batch, greedy_decode
from .text_encoder import TextEmbedding, TextEncoder
from .training import (
    CheckpointError,
    NaNLossError,
    TrainConfig,
    Trainer,
    run_training,
    trainer_from_checkpoint,
)

__version__ = "0.1.0"
