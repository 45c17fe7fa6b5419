"""The seed-pinned overfit fixture used by the trainability and alignment checks.

Every formula is eight full-size glyphs filling a 32x256 canvas, so each of
the L = 8 grid columns covers exactly one glyph cell and one target token.
With uniform per-cell content, a coverage penalty with ASE_T = 0 matches
the ideal scan and gives the attention model its initial nudge.
"""

from dataclasses import dataclass

from .config import SynthConfig, TrainConfig, model_preset
from .dataset import Vocab
from .synth import synth_generate, synth_vocab_tokens
from .training import SampleSet

OVERFIT_SYNTH = SynthConfig(scale=4, min_items=1, max_items=1, min_cells=8, max_cells=8,
                            p_sup=0.0, p_sub=0.0, p_frac=0.0)
OVERFIT_SIZE = 32


def overfit_train_config(seed=0, **overrides):
    values = dict(lr=3e-3, batch_size=8, max_steps=800, max_epochs=10_000, eval_period=100,
                  beam_width=1, max_len=30, lambda_a=3e-3, ase_target=0.0,
                  valid_fraction=0.0, seed=seed)
    values.update(overrides)
    return TrainConfig(**values)


@dataclass
class OverfitFixture:
    samples: list
    vocab: Vocab
    model_config: object
    train_config: TrainConfig
    data: SampleSet


def overfit_fixture(seed=0, n_samples=OVERFIT_SIZE, **train_overrides):
    """Corpus, vocabulary, configs and standardized data for one seed."""
    samples = synth_generate(n_samples, OVERFIT_SYNTH, seed=seed, unique=True)
    vocab = Vocab(synth_vocab_tokens(OVERFIT_SYNTH))
    cfg = model_preset("overfit", vocab_size=vocab.size)
    data = SampleSet.from_images([s.image for s in samples], [s.tokens for s in samples],
                                 vocab, cfg.canvas, cfg.dtype)
    return OverfitFixture(samples, vocab, cfg, overfit_train_config(seed, **train_overrides), data)
