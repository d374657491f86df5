"""Strain-gauge spectrogram classification: features, CNN, t-SNE, streaming."""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    DataError,
    FormatError,
    MalformedInputError,
    ShapeError,
    StateError,
    StrainSenseError,
    StreamError,
)
from .signal import (
    NormStats,
    Spectrogram,
    TimeSeries,
    build_spectrogram,
    dft,
    half_magnitudes,
    normalize_spectrograms,
    window_series,
)
from .cnn import Network, backward, forward, init_network, load_model, predict, save_model
from .optim import OptimizerSpec, optimizer_step
from .training import TrainConfig, TrainReport, evaluate, fit_and_evaluate, split_dataset, sweep, train
from .tsne import Embedding, FeatureMatrix, TsneConfig, conditional_affinities, extract_features, tsne
from .dataset import (
    ClassProfile,
    LabeledDataset,
    export_canonical,
    featurize_dataset,
    generate_synthetic,
    import_canonical,
    import_wide_csv,
    load_profiles,
)
from .stream import ClassificationEvent, StreamState, feed, watch
