"""Synthetic multimodal corpora with known ground truth.

Each sample pairs a token sequence with a small image and three fixed-size
object crops. Labels are a deterministic function of the tokens and of the
dominant object color, so a corpus with ``visual_dependency > 0`` cannot be
solved from text alone while ``visual_dependency = 0`` corpora can.

Token-id layout (within ``vocab_size``)::

    0                  padding (never appears inside a sentence)
    1                  rule marker (relation task: switches the label rule
                       to the color-dependent variant)
    2..3               continuation tokens (inside entity mentions)
    4..5               ambiguous entity triggers (type given by object color)
    6..6+2E-1          typed entity triggers, 2 variants per type
    6+2E..vocab-1      background tokens

Dataset files are line-delimited JSON: one header line followed by one
record per line, tensors stored as flat float lists plus a shape.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

TASK_NER = "ner"
TASK_RE = "re"

PAD_TOKEN = 0
RULE_MARKER_TOKEN = 1
CONT_TOKENS = (2, 3)
AMBIG_TRIGGER_TOKENS = (4, 5)
TYPED_TRIGGER_BASE = 6
VARIANTS_PER_TYPE = 2
NUM_OBJECTS = 3

# Channel intensity prototypes for up to six color classes (values on the
# 1/256 grid so serialized pixels round-trip exactly).
_HI = 200 / 256
_LO = 40 / 256
COLOR_PROTOTYPES = np.array(
    [
        (_HI, _LO, _LO),
        (_LO, _HI, _LO),
        (_LO, _LO, _HI),
        (_HI, _HI, _LO),
        (_LO, _HI, _HI),
        (_HI, _LO, _HI),
    ]
)

_FORMAT_NAME = "mmie-corpus"
_FORMAT_VERSION = 1


class CorpusFormatError(ValueError):
    """Raised when a dataset file cannot be parsed."""


class ConfigError(ValueError):
    """Raised for invalid generation or run configuration."""


def typed_trigger_id(entity_type: int, variant: int) -> int:
    return TYPED_TRIGGER_BASE + entity_type * VARIANTS_PER_TYPE + variant


def background_token_range(num_entity_types: int, vocab_size: int) -> tuple[int, int]:
    lo = TYPED_TRIGGER_BASE + num_entity_types * VARIANTS_PER_TYPE
    return lo, vocab_size


@dataclass
class CorpusSpec:
    task: str
    vocab_size: int = 64
    num_entity_types: int = 3
    num_relation_types: int = 5
    num_train: int = 4000
    num_val: int = 1000
    num_test: int = 1000
    seed: int = 0
    visual_dependency: float = 0.5
    image_size: int = 16
    object_size: int = 8
    channels: int = 3

    def validate(self) -> None:
        if self.task not in (TASK_NER, TASK_RE):
            raise ConfigError(f"unknown task {self.task!r}")
        for name in ("num_train", "num_val", "num_test"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0.0 <= self.visual_dependency <= 1.0:
            raise ConfigError("visual_dependency must lie in [0, 1]")
        if self.num_entity_types < 1 or self.num_entity_types > len(COLOR_PROTOTYPES):
            raise ConfigError(
                f"num_entity_types must be in [1, {len(COLOR_PROTOTYPES)}]")
        if self.num_relation_types < 2:
            raise ConfigError("num_relation_types must be >= 2")
        bg_lo, bg_hi = background_token_range(self.num_entity_types, self.vocab_size)
        if bg_hi - bg_lo < 8:
            raise ConfigError(
                f"vocab_size {self.vocab_size} leaves fewer than 8 background tokens")
        if self.channels != 3:
            raise ConfigError("color-coded labels require channels == 3")
        if self.image_size < 2 * self.object_size:
            raise ConfigError("image_size must be at least twice object_size")

    def entity_type_names(self) -> list[str]:
        return [f"T{i}" for i in range(self.num_entity_types)]

    def relation_names(self) -> list[str]:
        return [f"R{i}" for i in range(self.num_relation_types)]


@dataclass(eq=False)
class Sample:
    """One multimodal record (NER or relation-classification)."""

    id: str
    task: str
    tokens: list[int]
    image: np.ndarray                 # (H, W, C) floats in [0, 1]
    objects: list[np.ndarray]         # exactly 3 crops, each (h, w, C)
    ner_labels: Optional[list[str]] = None
    head_span: Optional[tuple[int, int]] = None
    tail_span: Optional[tuple[int, int]] = None
    relation: Optional[int] = None

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.id == other.id
            and self.task == other.task
            and self.tokens == other.tokens
            and np.array_equal(self.image, other.image)
            and len(self.objects) == len(other.objects)
            and all(np.array_equal(a, b) for a, b in zip(self.objects, other.objects))
            and self.ner_labels == other.ner_labels
            and self.head_span == other.head_span
            and self.tail_span == other.tail_span
            and self.relation == other.relation
        )


# ---------------------------------------------------------------------------
# label rules
# ---------------------------------------------------------------------------

def dominant_color_class(objects: Sequence[np.ndarray], num_classes: int) -> int:
    """Color class carried by the object crops (nearest intensity prototype)."""
    mean = np.mean([o.reshape(-1, o.shape[-1]).mean(axis=0) for o in objects], axis=0)
    protos = COLOR_PROTOTYPES[:num_classes]
    scores = protos @ mean / (np.linalg.norm(protos, axis=1) * np.linalg.norm(mean) + 1e-12)
    return int(np.argmax(scores))


def _trigger_type(token: int) -> Optional[int]:
    if token >= TYPED_TRIGGER_BASE:
        return (token - TYPED_TRIGGER_BASE) // VARIANTS_PER_TYPE
    return None


def derive_ner_labels(tokens: Sequence[int], color_class: int,
                      num_entity_types: int) -> list[str]:
    """BIO labels as a pure function of tokens and the object color class."""
    bg_lo, _ = background_token_range(num_entity_types, 10 ** 9)
    labels = []
    open_type: Optional[int] = None
    for tok in tokens:
        if tok in AMBIG_TRIGGER_TOKENS:
            open_type = color_class
            labels.append(f"B-T{open_type}")
        elif TYPED_TRIGGER_BASE <= tok < bg_lo:
            open_type = _trigger_type(tok)
            labels.append(f"B-T{open_type}")
        elif tok in CONT_TOKENS and open_type is not None:
            labels.append(f"I-T{open_type}")
        else:
            open_type = None
            labels.append("O")
    return labels


def derive_relation(tokens: Sequence[int], head_span: tuple[int, int],
                    tail_span: tuple[int, int], color_class: int,
                    num_entity_types: int, num_relation_types: int) -> int:
    """Relation id as a pure function of tokens, spans and object color."""
    bg_lo, _ = background_token_range(num_entity_types, 10 ** 9)
    def span_class(span):
        trig = tokens[span[0]]
        if not TYPED_TRIGGER_BASE <= trig < bg_lo:
            raise ValueError(f"span does not start with a typed trigger: {trig}")
        return _trigger_type(trig)

    a = span_class(head_span)
    b = span_class(tail_span)
    visual = RULE_MARKER_TOKEN in tokens
    r = a + b * num_entity_types + (color_class if visual else 0)
    return r % num_relation_types


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _quantize(values: np.ndarray) -> np.ndarray:
    """Snap to the k/256 grid so JSON round-trips are exact and short."""
    return np.clip(np.rint(values * 256), 0, 255) / 256


def _make_objects(rng: np.random.Generator, color_class: int,
                  spec: CorpusSpec) -> list[np.ndarray]:
    base = COLOR_PROTOTYPES[color_class]
    crops = []
    for _ in range(NUM_OBJECTS):
        noise = rng.integers(-16, 17, size=(spec.object_size, spec.object_size,
                                            spec.channels)) / 256
        crops.append(_quantize(base[None, None, :] + noise))
    return crops


def _make_image(rng: np.random.Generator, objects: Sequence[np.ndarray],
                spec: CorpusSpec) -> np.ndarray:
    size, osz = spec.image_size, spec.object_size
    image = _quantize(rng.integers(0, 257, size=(size, size, spec.channels)) / 256)
    corners = [(0, 0), (0, size - osz), (size - osz, 0)]
    for crop, (r, c) in zip(objects, corners):
        image[r:r + osz, c:c + osz] = crop
    return image


def _background_run(rng: np.random.Generator, spec: CorpusSpec,
                    low: int = 1, high: int = 3) -> list[int]:
    lo, hi = background_token_range(spec.num_entity_types, spec.vocab_size)
    n = int(rng.integers(low, high + 1))
    return [int(t) for t in rng.integers(lo, hi, size=n)]


def _mention_tokens(rng: np.random.Generator, trigger: int) -> list[int]:
    n_cont = int(rng.integers(0, 3))
    return [trigger] + [int(rng.choice(CONT_TOKENS)) for _ in range(n_cont)]


def _gen_ner_sample(rng: np.random.Generator, spec: CorpusSpec, sid: str) -> Sample:
    color = int(rng.integers(spec.num_entity_types))
    objects = _make_objects(rng, color, spec)
    image = _make_image(rng, objects, spec)

    n_mentions = 1 + int(rng.random() < 0.5)
    # At most one mention per sample may need the image: one shared color
    # class can only disambiguate a single ambiguous trigger.
    ambiguous_at = -1
    if spec.visual_dependency > 0 and rng.random() < spec.visual_dependency:
        ambiguous_at = int(rng.integers(n_mentions))

    tokens = _background_run(rng, spec)
    for m in range(n_mentions):
        if m == ambiguous_at:
            trigger = int(rng.choice(AMBIG_TRIGGER_TOKENS))
        else:
            t = int(rng.integers(spec.num_entity_types))
            trigger = typed_trigger_id(t, int(rng.integers(VARIANTS_PER_TYPE)))
        tokens += _mention_tokens(rng, trigger)
        tokens += _background_run(rng, spec)

    labels = derive_ner_labels(tokens, color, spec.num_entity_types)
    return Sample(id=sid, task=TASK_NER, tokens=tokens, image=image,
                  objects=objects, ner_labels=labels)


def _gen_re_sample(rng: np.random.Generator, spec: CorpusSpec, sid: str) -> Sample:
    color = int(rng.integers(spec.num_entity_types))
    objects = _make_objects(rng, color, spec)
    image = _make_image(rng, objects, spec)
    visual = spec.visual_dependency > 0 and rng.random() < spec.visual_dependency

    tokens = _background_run(rng, spec)
    if visual:
        tokens.append(RULE_MARKER_TOKEN)
        tokens += _background_run(rng, spec, 0, 2)

    def mention() -> tuple[list[int], int]:
        t = int(rng.integers(spec.num_entity_types))
        trigger = typed_trigger_id(t, int(rng.integers(VARIANTS_PER_TYPE)))
        return _mention_tokens(rng, trigger), t

    head_toks, _ = mention()
    head_span = (len(tokens), len(tokens) + len(head_toks))
    tokens += head_toks
    tokens += _background_run(rng, spec)
    tail_toks, _ = mention()
    tail_span = (len(tokens), len(tokens) + len(tail_toks))
    tokens += tail_toks
    tokens += _background_run(rng, spec)

    relation = derive_relation(tokens, head_span, tail_span, color,
                               spec.num_entity_types, spec.num_relation_types)
    return Sample(id=sid, task=TASK_RE, tokens=tokens, image=image,
                  objects=objects, head_span=head_span, tail_span=tail_span,
                  relation=relation)


def generate_corpus(spec: CorpusSpec) -> tuple[list[Sample], list[Sample], list[Sample]]:
    """Generate disjoint train/val/test splits, fully determined by the seed."""
    spec.validate()
    gen_one = _gen_ner_sample if spec.task == TASK_NER else _gen_re_sample
    splits = []
    children = np.random.SeedSequence(spec.seed).spawn(3)
    for name, child, count in zip(("train", "val", "test"), children,
                                  (spec.num_train, spec.num_val, spec.num_test)):
        rng = np.random.Generator(np.random.PCG64(child))
        splits.append([gen_one(rng, spec, f"{spec.task}-{name}-{i:05d}")
                       for i in range(count)])
    return tuple(splits)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _tensor_to_json(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "data": [float(x) for x in arr.reshape(-1)]}


def _tensor_from_json(obj: dict, where: str) -> np.ndarray:
    try:
        shape = tuple(obj["shape"])
        data = np.asarray(obj["data"], dtype=np.float64)
    except (KeyError, TypeError) as exc:
        raise CorpusFormatError(f"{where}: malformed tensor ({exc})") from None
    if data.size != int(np.prod(shape)):
        raise CorpusFormatError(
            f"{where}: tensor has {data.size} values, shape {shape} needs "
            f"{int(np.prod(shape))}")
    return data.reshape(shape)


def _sample_to_record(s: Sample) -> dict:
    rec = {
        "id": s.id,
        "task": s.task,
        "tokens": s.tokens,
        "image": _tensor_to_json(s.image),
        "objects": [_tensor_to_json(o) for o in s.objects],
    }
    if s.task == TASK_NER:
        rec["ner_labels"] = s.ner_labels
    else:
        rec["head_span"] = list(s.head_span)
        rec["tail_span"] = list(s.tail_span)
        rec["relation"] = s.relation
    return rec


def _sample_from_record(rec: dict, where: str) -> Sample:
    try:
        task = rec["task"]
        tokens = [int(t) for t in rec["tokens"]]
        image = _tensor_from_json(rec["image"], where)
        objects = [_tensor_from_json(o, where) for o in rec["objects"]]
        sid = rec["id"]
    except (KeyError, TypeError) as exc:
        raise CorpusFormatError(f"{where}: missing field ({exc})") from None
    if len(objects) != NUM_OBJECTS:
        raise CorpusFormatError(f"{where}: expected {NUM_OBJECTS} objects, "
                                f"got {len(objects)}")
    if task == TASK_NER:
        labels = rec.get("ner_labels")
        if not isinstance(labels, list) or len(labels) != len(tokens):
            raise CorpusFormatError(f"{where}: ner_labels missing or wrong length")
        return Sample(id=sid, task=task, tokens=tokens, image=image,
                      objects=objects, ner_labels=[str(t) for t in labels])
    if task == TASK_RE:
        try:
            head = tuple(int(x) for x in rec["head_span"])
            tail = tuple(int(x) for x in rec["tail_span"])
            rel = int(rec["relation"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusFormatError(f"{where}: bad relation fields ({exc})") from None
        n = len(tokens)
        for span in (head, tail):
            if not (0 <= span[0] < span[1] <= n):
                raise CorpusFormatError(f"{where}: span {span} out of bounds for "
                                        f"length {n}")
        return Sample(id=sid, task=task, tokens=tokens, image=image,
                      objects=objects, head_span=head, tail_span=tail, relation=rel)
    raise CorpusFormatError(f"{where}: unknown task {task!r}")


def write_corpus(samples: Sequence[Sample], path, meta: Optional[dict] = None) -> None:
    header = {"format": _FORMAT_NAME, "version": _FORMAT_VERSION,
              "count": len(samples)}
    if meta:
        header.update(meta)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header) + "\n")
        for s in samples:
            f.write(json.dumps(_sample_to_record(s)) + "\n")


def read_corpus_with_meta(path) -> tuple[list[Sample], dict]:
    samples = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if lineno == 1:
                if rec.get("format") != _FORMAT_NAME:
                    raise CorpusFormatError(f"{path}:1: not a {_FORMAT_NAME} file")
                header = rec
                continue
            samples.append(_sample_from_record(rec, f"{path}:{lineno}"))
    try:
        header
    except NameError:
        raise CorpusFormatError(f"{path}: empty file (missing header line)") from None
    if header.get("count") != len(samples):
        raise CorpusFormatError(
            f"{path}: header count {header.get('count')} != {len(samples)} records")
    return samples, header


def read_corpus(path) -> list[Sample]:
    return read_corpus_with_meta(path)[0]


def corpus_meta(spec: CorpusSpec) -> dict:
    """Header fields the trainer needs to rebuild vocab/label spaces."""
    return {
        "task": spec.task,
        "vocab_size": spec.vocab_size,
        "num_entity_types": spec.num_entity_types,
        "num_relation_types": spec.num_relation_types,
        "visual_dependency": spec.visual_dependency,
    }
