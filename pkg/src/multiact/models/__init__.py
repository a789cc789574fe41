from .base import EncoderOutput, StateEncoder, encode_state, pad_states, teacher_force_choice
from .cas import CasModel, GcasModel, GcasStepTrace, LossBreakdown
from .classifier import ClassificationModel
from .seq2seq import BeamHypothesis, Seq2SeqModel

MODEL_KINDS = ("classification", "seq2seq", "cas", "gcas")


def build_model(kind: str, vocab, hidden: int = 64, width: int = 128):
    if kind == "gcas":
        return GcasModel.from_vocab(vocab, hidden)
    if kind == "cas":
        return CasModel.from_vocab(vocab, hidden)
    if kind == "seq2seq":
        return Seq2SeqModel.from_vocab(vocab, hidden)
    if kind == "classification":
        return ClassificationModel.from_vocab(vocab, width)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
