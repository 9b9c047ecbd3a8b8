"""Multimodal information extraction on synthetic corpora.

A small, fully trainable pipeline: a prompt-fused transformer text encoder
paired with a shared convolutional image backbone, a Gaussian KL loss that
pulls the visual summary toward the object-enhanced textual prior, an
inter-sample augmentation stage (batch attention, vicinal sampling, mixup),
and CRF / relation-classifier heads.  The CRF recursions run in a compiled
extension when available, with a pure-NumPy fallback selected at import.
"""

from mmie.config import RunConfig, config_hash, load_config
from mmie.data import (CorpusFormatError, CorpusSpec, ConfigError, Sample,
                       TASK_NER, TASK_RE, generate_corpus, read_corpus,
                       read_corpus_with_meta, write_corpus)
from mmie.kernels import COMPILED, kernel_name
from mmie.model import ModelConfig, MultimodalExtractor, collate_batch

__version__ = "0.1.0"

__all__ = [
    "COMPILED",
    "ConfigError",
    "CorpusFormatError",
    "CorpusSpec",
    "ModelConfig",
    "MultimodalExtractor",
    "RunConfig",
    "Sample",
    "TASK_NER",
    "TASK_RE",
    "__version__",
    "collate_batch",
    "config_hash",
    "generate_corpus",
    "kernel_name",
    "load_config",
    "read_corpus",
    "read_corpus_with_meta",
    "write_corpus",
]
