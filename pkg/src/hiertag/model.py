"""Model assembly: dimension record, seeded parameter construction, and the
bundle of encoder + controller views over one shared ParamSet."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .controller import ControllerParams, WORD_LEVEL_MASK
from .encoder import EncoderParams
from .numerics import ParamSet


@dataclass(frozen=True)
class ModelDims:
    """Everything needed to rebuild parameter shapes, plus the variant flag
    for the word-actions-only ablation (which changes masking, not shapes)."""

    vocab_size: int
    embed_dim: int = 32
    word_hidden: int = 16
    sent_hidden: int = 16
    controller_hidden: int = 32
    head_hidden: int = 32
    word_only: bool = False

    @property
    def read_size(self):
        # word width + sentence width + paragraph width (paragraph == sentence)
        return 2 * self.word_hidden + 2 * self.sent_hidden + 2 * self.sent_hidden

    def to_dict(self):
        return asdict(self)

    @staticmethod
    def from_dict(d):
        return ModelDims(**d)


@dataclass
class Model:
    dims: ModelDims
    params: ParamSet
    encoder: EncoderParams
    controller: ControllerParams

    @property
    def level_mask(self):
        """Extra action mask implied by the variant (None means no restriction)."""
        return WORD_LEVEL_MASK if self.dims.word_only else None

    def copy(self):
        return model_from_paramset(self.dims, self.params.copy())


def build_model(dims, seed):
    """Seeded parameter construction; identical seeds give identical values.

    Parameters are drawn in a fixed order, uniform in +-1/sqrt(fan_in), with
    LSTM forget-gate biases set to 1.0, then snapped to the float32 grid so
    checkpoints round-trip exactly.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    ps = ParamSet()
    encoder = EncoderParams.build(
        ps, dims.vocab_size, dims.embed_dim, dims.word_hidden, dims.sent_hidden, rng
    )
    controller = ControllerParams.build(
        ps, dims.read_size, dims.controller_hidden, dims.head_hidden, rng
    )
    ps.quantize_storage()
    return Model(dims, ps, encoder, controller)


def model_from_paramset(dims, ps):
    return Model(dims, ps, EncoderParams.from_paramset(ps), ControllerParams.from_paramset(ps))
