"""scikit-learn style wrapper: fit on (images, token strings), predict markup."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from .config import TrainConfig, model_preset
from .dataset import Vocab, build_vocab, Record
from .decoding import strip_eos
from .errors import ContractError
from .metrics import corpus_bleu
from .model import Im2MarkupModel
from .training import SampleSet, decode_set, train


def check_images(X):
    """Validate a sequence of 2-D uint8-range grayscale rasters."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        raise ContractError("expected a sequence of images, got a single 2-D array")
    images = [np.asarray(x) for x in X]
    if not images:
        raise ContractError("no images given")
    for i, im in enumerate(images):
        if im.ndim != 2:
            raise ContractError(f"image {i}: expected 2-D grayscale, got shape {im.shape}")
        if im.size and (im.min() < 0 or im.max() > 255):
            raise ContractError(f"image {i}: pixel values must lie in [0, 255]")
    return [im.astype(np.uint8) for im in images]


def check_targets(y, n):
    targets = [t if isinstance(t, str) else " ".join(t) for t in y]
    if len(targets) != n:
        raise ContractError(f"{n} images but {len(targets)} targets")
    if any(not t.split() for t in targets):
        raise ContractError("empty target sequence")
    return targets


class Im2MarkupEstimator(BaseEstimator):
    """Image-to-markup transducer with the fit/predict/score protocol.

    Parameters
    ----------
    preset : str
        Model preset name; ``vocab_size`` is filled in from the data.
    model_overrides : dict, optional
        Extra :class:`ModelConfig` fields.
    lr, batch_size, max_steps, lambda_r, lambda_a, ase_target, eval_period : training knobs
    beam_width, max_len : decoding knobs used by ``predict``
    freq_threshold : int
        Minimum token count to enter the vocabulary.
    seed : int
        Seeds parameter init and batching.
    """

    def __init__(self, preset="tiny", model_overrides=None, lr=1e-4, batch_size=56,
                 max_steps=1000, lambda_r=5e-5, lambda_a=0.0, ase_target=0.0,
                 eval_period=500, beam_width=10, max_len=160, freq_threshold=1, seed=0):
        self.preset = preset
        self.model_overrides = model_overrides
        self.lr = lr
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.lambda_r = lambda_r
        self.lambda_a = lambda_a
        self.ase_target = ase_target
        self.eval_period = eval_period
        self.beam_width = beam_width
        self.max_len = max_len
        self.freq_threshold = freq_threshold
        self.seed = seed

    def _train_config(self):
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, max_steps=self.max_steps,
                           max_epochs=10 ** 9, lambda_r=self.lambda_r, lambda_a=self.lambda_a,
                           ase_target=self.ase_target, eval_period=self.eval_period,
                           beam_width=self.beam_width, max_len=self.max_len,
                           valid_fraction=0.0, seed=self.seed)

    def fit(self, X, y):
        images = check_images(X)
        targets = check_targets(y, len(images))
        records = [Record(image=None, tokens=t) for t in targets]
        self.vocab_ = build_vocab(records, self.freq_threshold)
        cfg = model_preset(self.preset, vocab_size=self.vocab_.size, **(self.model_overrides or {}))
        self.model_ = Im2MarkupModel.initialize(cfg, self.seed)
        data = SampleSet.from_images(images, targets, self.vocab_, cfg.canvas, cfg.dtype)
        result = train(self.model_, self._train_config(), data, vocab=self.vocab_)
        if result.best_params is not None:
            self.model_.restore(result.best_params)
        self.history_ = result.history
        self.n_steps_ = result.steps
        return self

    def _samples(self, X):
        images = check_images(X)
        cfg = self.model_.cfg
        return SampleSet.from_images(images, [], Vocab([]), cfg.canvas, cfg.dtype)

    def predict(self, X):
        """Decoded token strings, one per image."""
        check_is_fitted(self, "model_")
        samples = self._samples(X)
        samples.targets = [[]] * len(samples.canvases)
        ids = decode_set(self.model_, samples, self.beam_width, self.max_len)
        return [self.vocab_.to_text(strip_eos(s)) for s in ids]

    def transform(self, X):
        """Encoder feature sequences, shape (N, L, D)."""
        check_is_fitted(self, "model_")
        samples = self._samples(X)
        with ad.no_grad():
            return self.model_.encode(samples.canvases).a.data.copy()

    def score(self, X, y):
        """Corpus BLEU of ``predict(X)`` against ``y``."""
        refs = check_targets(y, len(check_images(X)))
        return corpus_bleu(self.predict(X), refs)
