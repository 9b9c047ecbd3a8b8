"""Task heads: BIO-tag CRF for sequence labeling and a linear relation
classifier over concatenated span representations.

Both heads accept mixed targets produced by the augmentation pipeline: the
loss of a Mixed(lam, a, b) target is lam * loss(a) + (1 - lam) * loss(b),
which is the standard convex surrogate when hard labels cannot be averaged
directly (a CRF tag sequence has no meaningful elementwise mean).
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from mmie.augment import BatchReps, HardClass, HardSeq, Mixed
from mmie.crf import LinearChainCRF, crf_nll

# Additive score for disallowed BIO transitions; large enough to make them
# vanish from the posterior, finite so gradients and the brute-force oracle
# stay well-defined.
BIO_PENALTY = -1.0e4


class BioTagSchema:
    """Tag inventory ["O", "B-<t>", "I-<t>", ...] over entity type names."""

    def __init__(self, entity_types: list[str]):
        if not entity_types:
            raise ValueError("need at least one entity type")
        self.entity_types = list(entity_types)
        self.tags = ["O"]
        for t in self.entity_types:
            self.tags += [f"B-{t}", f"I-{t}"]
        self._index = {tag: i for i, tag in enumerate(self.tags)}

    @property
    def num_tags(self) -> int:
        return len(self.tags)

    def encode(self, labels: list[str]) -> list[int]:
        try:
            return [self._index[t] for t in labels]
        except KeyError as exc:
            raise ValueError(f"unknown tag {exc.args[0]!r}") from None

    def decode(self, ids: list[int]) -> list[str]:
        return [self.tags[int(i)] for i in ids]

    def transition_penalty(self) -> torch.Tensor:
        """(L, L) additive scores, [from, to]: I-t is only reachable from
        B-t or I-t."""
        L = self.num_tags
        pen = torch.zeros(L, L)
        for k in range(len(self.entity_types)):
            b_id, i_id = 1 + 2 * k, 2 + 2 * k
            pen[:, i_id] = BIO_PENALTY
            pen[b_id, i_id] = 0.0
            pen[i_id, i_id] = 0.0
        return pen

    def start_penalty(self) -> torch.Tensor:
        """(L,) additive scores: sequences may not begin inside an entity."""
        pen = torch.zeros(self.num_tags)
        for k in range(len(self.entity_types)):
            pen[2 + 2 * k] = BIO_PENALTY
        return pen


def structured_nll(emissions: torch.Tensor, transitions: torch.Tensor,
                   start: torch.Tensor, end: torch.Tensor, target) -> torch.Tensor:
    """Scalar NLL of one (n, L) emission matrix against a Target."""
    if emissions.dim() != 2:
        raise ValueError(f"emissions must be (n, L), got {tuple(emissions.shape)}")
    n = emissions.shape[0]
    if isinstance(target, Mixed):
        a = structured_nll(emissions, transitions, start, end, target.a)
        b = structured_nll(emissions, transitions, start, end, target.b)
        return target.lam * a + (1.0 - target.lam) * b
    if isinstance(target, HardSeq):
        if len(target.tags) != n:
            raise ValueError(f"target has {len(target.tags)} tags for {n} positions")
        tags = torch.as_tensor(target.tags, dtype=torch.int64).unsqueeze(0)
        lengths = torch.as_tensor([n], dtype=torch.int64)
        return crf_nll(emissions.unsqueeze(0), transitions, start, end,
                       tags, lengths)[0]
    raise ValueError(f"unsupported target {type(target).__name__}")


class NerHead(nn.Module):
    """Linear emission projection plus a linear-chain CRF with BIO
    transition constraints."""

    def __init__(self, d_model: int, schema: BioTagSchema):
        super().__init__()
        self.schema = schema
        self.emit = nn.Linear(d_model, schema.num_tags)
        self.crf = LinearChainCRF(schema.num_tags)
        self.register_buffer("trans_penalty", schema.transition_penalty())
        self.register_buffer("start_pen", schema.start_penalty())

    def sequence_nll(self, states: torch.Tensor, tags: torch.Tensor,
                     lengths: torch.Tensor) -> torch.Tensor:
        """(B,) unnormalized NLL for hard tag rows."""
        return self.crf.nll(self.emit(states), tags, lengths,
                            self.trans_penalty, self.start_pen)

    def loss(self, batch: BatchReps) -> torch.Tensor:
        """Mean per-token-normalized NLL over all rows, mixed rows included.

        Mixed rows expand into their two hard components; each component is
        scored against the first len(component) positions of the row and
        normalized by its own length, then combined with weights lam and
        1 - lam.  All components go through one batched CRF call.
        """
        if not batch.is_sequence:
            raise ValueError("sequence labeling loss needs sequence reps")
        emissions = self.emit(batch.states)
        n_max = emissions.shape[1]
        real_counts = batch.mask.sum(dim=1)

        rows, tag_rows, lens, weights = [], [], [], []

        def add(row: int, tags: tuple[int, ...], weight: float, exact_len: bool):
            n = len(tags)
            if n > n_max or (exact_len and n != int(real_counts[row])):
                raise ValueError(f"row {row}: target length {n} does not fit")
            rows.append(row)
            tag_rows.append(list(tags) + [0] * (n_max - n))
            lens.append(n)
            weights.append(weight)

        for r, tgt in enumerate(batch.targets):
            if isinstance(tgt, HardSeq):
                add(r, tgt.tags, 1.0, exact_len=True)
            elif isinstance(tgt, Mixed):
                if not isinstance(tgt.a, HardSeq) or not isinstance(tgt.b, HardSeq):
                    raise ValueError("mixed NER targets must nest tag sequences")
                add(r, tgt.a.tags, tgt.lam, exact_len=False)
                add(r, tgt.b.tags, 1.0 - tgt.lam, exact_len=False)
            else:
                raise ValueError(f"unsupported target {type(tgt).__name__}")

        nll = self.crf.nll(
            emissions[torch.as_tensor(rows, dtype=torch.long)],
            torch.as_tensor(tag_rows, dtype=torch.int64),
            torch.as_tensor(lens, dtype=torch.int64),
            self.trans_penalty, self.start_pen)
        w = torch.as_tensor(weights, dtype=nll.dtype)
        n = torch.as_tensor(lens, dtype=nll.dtype)
        return (w * nll / n).sum() / len(batch.targets)

    @torch.no_grad()
    def decode(self, states: torch.Tensor, mask: torch.Tensor) -> list[list[int]]:
        lengths = mask.sum(dim=1).to(torch.int64)
        return self.crf.decode(self.emit(states), lengths,
                               self.trans_penalty, self.start_pen)


class ReHead(nn.Module):
    """Relation classifier over concat(head span mean, tail span mean)."""

    def __init__(self, d_model: int, num_relations: int):
        super().__init__()
        if num_relations < 2:
            raise ValueError("need at least 2 relation classes")
        self.d_model = d_model
        self.num_relations = num_relations
        self.classifier = nn.Linear(2 * d_model, num_relations)

    def pair_vec(self, states: torch.Tensor, head_spans: torch.Tensor,
                 tail_spans: torch.Tensor) -> torch.Tensor:
        """(B, n, d) states + (B, 2) half-open spans -> (B, 2d) pair vectors."""
        B, n, _ = states.shape
        reps = []
        for b in range(B):
            parts = []
            for span in (head_spans[b], tail_spans[b]):
                s, e = int(span[0]), int(span[1])
                if not 0 <= s < e <= n:
                    raise ValueError(f"span ({s}, {e}) out of range for length {n}")
                parts.append(states[b, s:e].mean(dim=0))
            reps.append(torch.cat(parts))
        return torch.stack(reps)

    def logits(self, pair_vecs: torch.Tensor) -> torch.Tensor:
        return self.classifier(pair_vecs)

    def loss(self, batch: BatchReps) -> torch.Tensor:
        """Mean cross-entropy over all rows, mixed rows loss-interpolated."""
        if batch.is_sequence:
            raise ValueError("relation loss needs vector reps")
        logits = self.classifier(batch.vecs)

        rows, labels, weights = [], [], []

        def add(row: int, label: int, weight: float):
            if not 0 <= label < self.num_relations:
                raise ValueError(f"label {label} out of range")
            rows.append(row)
            labels.append(label)
            weights.append(weight)

        for r, tgt in enumerate(batch.targets):
            if isinstance(tgt, HardClass):
                add(r, tgt.label, 1.0)
            elif isinstance(tgt, Mixed):
                if not isinstance(tgt.a, HardClass) or not isinstance(tgt.b, HardClass):
                    raise ValueError("mixed relation targets must nest class labels")
                add(r, tgt.a.label, tgt.lam)
                add(r, tgt.b.label, 1.0 - tgt.lam)
            else:
                raise ValueError(f"unsupported target {type(tgt).__name__}")

        ce = F.cross_entropy(logits[torch.as_tensor(rows, dtype=torch.long)],
                             torch.as_tensor(labels, dtype=torch.long),
                             reduction="none")
        w = torch.as_tensor(weights, dtype=ce.dtype)
        return (w * ce).sum() / len(batch.targets)


def total_loss(task_loss: torch.Tensor, semantic: torch.Tensor,
               weight: float = 0.5) -> torch.Tensor:
    """task + weight * semantic."""
    return task_loss + weight * semantic
