"""Grammar-constrained decoding.

Every hypothesis tracks where it is inside a note (pitch, onset, value),
how many notes it has emitted and how many measures it has opened.  Only
tokens that keep the output a well-formed sequence of exactly
``expected_notes`` notes in at most ``measure_budget`` measures are ever
expanded, so the result always decodes strictly.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from ..core import MAX_ONSET
from ..tokenizer import (
    EOS,
    NEW_MEASURE,
    ONSET_OFFSET,
    PAD,
    PITCH_OFFSET,
    VALUE_OFFSET,
    VOCAB_SIZE,
    TokenSeq,
)
from .transformer import Seq2Seq


@dataclass(frozen=True)
class _Hyp:
    tokens: tuple[int, ...]
    logp: float
    phase: int  # 0 pitch, 1 onset, 2 value
    notes: int
    measures: int


def legal_mask(phase: int, notes: int, measures: int, expected_notes: int,
               measure_budget: int, max_onset: int = MAX_ONSET) -> torch.Tensor:
    mask = torch.zeros(VOCAB_SIZE, dtype=torch.bool)
    if phase == 0:
        if notes < expected_notes:
            mask[PITCH_OFFSET:ONSET_OFFSET] = True
        else:
            mask[EOS] = True
        if measures < measure_budget:
            mask[NEW_MEASURE] = True
    elif phase == 1:
        mask[ONSET_OFFSET:ONSET_OFFSET + max_onset + 1] = True
    else:
        mask[VALUE_OFFSET:VOCAB_SIZE] = True
    return mask


def _advance(h: _Hyp, tok: int, logp: float) -> _Hyp:
    if tok == NEW_MEASURE:
        return _Hyp(h.tokens + (tok,), logp, 0, h.notes, h.measures + 1)
    if h.phase == 2:
        return _Hyp(h.tokens + (tok,), logp, 0, h.notes + 1, h.measures)
    return _Hyp(h.tokens + (tok,), logp, h.phase + 1, h.notes, h.measures)


def _as_tensor(input_ids) -> torch.Tensor:
    ids = input_ids.ids if isinstance(input_ids, TokenSeq) else tuple(input_ids)
    return torch.tensor([ids], dtype=torch.long)


@torch.no_grad()
def beam_decode(
    model: Seq2Seq,
    input_ids,
    beam: int = 5,
    expected_notes: int = 0,
    measure_budget: int = 2,
    max_onset: int = MAX_ONSET,
    length_penalty: float = 1.0,
) -> TokenSeq:
    """Length-normalized beam search restricted to grammar-legal tokens."""
    if expected_notes < 0 or measure_budget < 1 or beam < 1:
        raise ValueError("expected_notes >= 0, measure_budget >= 1 and beam >= 1 required")
    model.eval()
    memory, mask = model.encode(_as_tensor(input_ids))
    alive = [_Hyp((), 0.0, 0, 0, 1)]
    finished: list[tuple[float, _Hyp]] = []

    while alive and len(finished) < beam:
        dec_in = torch.tensor([(PAD,) + h.tokens for h in alive], dtype=torch.long)
        logits = model.decode(dec_in, memory.expand(len(alive), -1, -1), mask.expand(len(alive), -1, -1, -1))
        logprobs = torch.log_softmax(logits[:, -1].double(), dim=-1)
        candidates = []
        for h, lp in zip(alive, logprobs):
            legal = legal_mask(h.phase, h.notes, h.measures, expected_notes, measure_budget, max_onset)
            scores = lp.masked_fill(~legal, float("-inf"))
            k = min(beam, int(legal.sum()))
            top = torch.topk(scores, k)
            for value, tok in zip(top.values.tolist(), top.indices.tolist()):
                candidates.append((h.logp + value, h, tok))
        # ties broken by token id for determinism
        candidates.sort(key=lambda c: (-c[0], c[1].tokens, c[2]))
        alive = []
        for rank, (logp, h, tok) in enumerate(candidates):
            nh = _advance(h, tok, logp)
            if tok == EOS:
                if rank < beam:
                    finished.append((logp / len(nh.tokens) ** length_penalty, nh))
            elif len(alive) < beam:
                alive.append(nh)
            if len(alive) >= beam and rank >= beam - 1:
                break

    best = max(finished, key=lambda f: f[0])[1]
    return TokenSeq(best.tokens)


@torch.no_grad()
def greedy_decode(
    model: Seq2Seq,
    input_ids,
    expected_notes: int = 0,
    measure_budget: int = 2,
    max_onset: int = MAX_ONSET,
) -> TokenSeq:
    """Pick the most likely legal token at every step."""
    model.eval()
    memory, mask = model.encode(_as_tensor(input_ids))
    h = _Hyp((), 0.0, 0, 0, 1)
    while True:
        dec_in = torch.tensor([(PAD,) + h.tokens], dtype=torch.long)
        logits = model.decode(dec_in, memory, mask)[0, -1].double()
        legal = legal_mask(h.phase, h.notes, h.measures, expected_notes, measure_budget, max_onset)
        tok = int(torch.argmax(logits.masked_fill(~legal, float("-inf"))))
        h = _advance(h, tok, 0.0)
        if tok == EOS:
            return TokenSeq(h.tokens)
