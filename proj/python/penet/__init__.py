"""Python bindings for the penet synthesis library."""

# libtorch must be loaded before the extension resolves its symbols
import torch  # noqa: F401

from ._penet import (  # noqa: F401
    DEFAULT_TAU,
    JOINT_COUNT,
    CheckpointError,
    Corpus,
    IoError,
    NumericalError,
    ParameterError,
    Trainer,
    TrainConfig,
    TrainingError,
    VocabularyError,
    compose,
    fid,
    generate_corpus,
    kl_divergence,
    psnr,
    render_heatmaps,
    render_skeleton,
    run_cli,
    ssim,
)
