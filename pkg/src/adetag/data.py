"""Corpus ingestion: pipe-delimited raw relation records in, per-drug
training samples out (tokens, BIO entity tags, binary per-token ADE labels),
plus sentence-level splitting and vocabulary construction."""

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .vocab import Vocab

RAW_FIELDS = 8  # doc_id|sentence|ade_text|ade_begin|ade_end|drug_text|drug_begin|drug_end

# words (hyphens/apostrophes kept inside, e.g. drug names like 5-FU),
# everything else one punctuation token at a time
_TOKEN_RE = re.compile(r"\w+(?:['\-]\w+)*|[^\w\s]")


class DataError(ValueError):
    pass


@dataclass
class RawRecord:
    doc_id: str
    sentence: str
    ade_text: str
    ade_begin: int
    ade_end: int
    drug_text: str
    drug_begin: int
    drug_end: int

    @property
    def sentence_key(self):
        return (self.doc_id, self.sentence)

    @property
    def drug_span(self):
        return (self.drug_begin, self.drug_end)

    @property
    def ade_span(self):
        return (self.ade_begin, self.ade_end)


@dataclass
class Sample:
    """One drug-conditioned instance: the drug query is a contiguous token
    span of the sentence, ADE labels mark only this drug's effects."""

    id: str
    tokens: list
    pos_tags: list
    entity_labels: list
    drug_span: tuple  # [start_tok, end_tok)
    drug_text: str
    ade_labels: list

    @property
    def drug_tokens(self):
        return self.tokens[self.drug_span[0]:self.drug_span[1]]

    def to_dict(self):
        return {
            "id": self.id,
            "tokens": self.tokens,
            "pos": self.pos_tags,
            "entity_labels": self.entity_labels,
            "drug_span": list(self.drug_span),
            "drug_text": self.drug_text,
            "ade_labels": self.ade_labels,
        }

    @classmethod
    def from_dict(cls, d, fallback_id=None):
        tokens = list(d["tokens"])
        n = len(tokens)
        return cls(
            id=str(d.get("id", fallback_id if fallback_id is not None else "")),
            tokens=tokens,
            pos_tags=list(d.get("pos", ["<unk>"] * n)),
            entity_labels=list(d.get("entity_labels", ["O"] * n)),
            drug_span=tuple(d["drug_span"]),
            drug_text=d.get("drug_text", ""),
            ade_labels=list(d.get("ade_labels", [0] * n)),
        )


def validate_sample(sample):
    """Raise DataError on any structural invariant violation."""
    n = len(sample.tokens)
    if not (len(sample.pos_tags) == len(sample.entity_labels) == len(sample.ade_labels) == n):
        raise DataError(f"sample {sample.id}: per-token lists disagree on length")
    prev = "O"
    for t, lab in enumerate(sample.entity_labels):
        if lab.startswith("I-"):
            kind = lab[2:]
            if prev not in (f"B-{kind}", f"I-{kind}"):
                raise DataError(f"sample {sample.id}: dangling {lab} at token {t}")
        prev = lab
    for t, ade in enumerate(sample.ade_labels):
        if ade not in (0, 1):
            raise DataError(f"sample {sample.id}: ade label {ade!r} not in {{0,1}}")
        if ade == 1 and sample.entity_labels[t] not in ("B-Disease", "I-Disease"):
            raise DataError(f"sample {sample.id}: ADE-positive token {t} outside a Disease span")
    start, end = sample.drug_span
    if not (0 <= start < end <= n):
        raise DataError(f"sample {sample.id}: drug span {sample.drug_span} out of range")
    for t in range(start, end):
        if sample.entity_labels[t] not in ("B-Drug", "I-Drug"):
            raise DataError(f"sample {sample.id}: drug span token {t} lacks a Drug tag")


def tokenize(text):
    """Offset-tracked tokens: list of (token, char_start, char_end)."""
    return [(m.group(0), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def _find_all(haystack, needle):
    positions, start = [], 0
    while True:
        i = haystack.find(needle, start)
        if i < 0:
            return positions
        positions.append(i)
        start = i + 1


def _normalize_offsets(rec):
    """Anchor spans to the sentence. Raw offsets may be document-anchored;
    both spans of a record share the same shift, detected by matching the
    annotation texts against the sentence."""
    sent = rec.sentence
    if (sent[rec.ade_begin:rec.ade_end] == rec.ade_text
            and sent[rec.drug_begin:rec.drug_end] == rec.drug_text):
        return rec
    ade_shifts = {rec.ade_begin - i for i in _find_all(sent, rec.ade_text)}
    drug_shifts = {rec.drug_begin - i for i in _find_all(sent, rec.drug_text)}
    common = sorted(s for s in ade_shifts & drug_shifts
                    if rec.ade_begin - s >= 0 and rec.drug_begin - s >= 0)
    if not common:
        raise DataError("span text does not occur in sentence at any shared shift")
    shift = common[0]
    rec.ade_begin -= shift
    rec.ade_end -= shift
    rec.drug_begin -= shift
    rec.drug_end -= shift
    return rec


def parse_raw(path):
    """Read pipe-delimited relation lines into RawRecords.

    Returns (records, rejects) where rejects is a list of
    (line_number, reason, line) for malformed input; nothing is silently
    dropped. Offsets are normalized to sentence anchoring.
    """
    records, rejects = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("|")
            if len(parts) != RAW_FIELDS:
                rejects.append((lineno, f"field count {len(parts)} != {RAW_FIELDS}", line))
                continue
            try:
                rec = RawRecord(
                    doc_id=parts[0], sentence=parts[1],
                    ade_text=parts[2], ade_begin=int(parts[3]), ade_end=int(parts[4]),
                    drug_text=parts[5], drug_begin=int(parts[6]), drug_end=int(parts[7]))
            except ValueError:
                rejects.append((lineno, "non-integer offset", line))
                continue
            if rec.ade_begin >= rec.ade_end or rec.drug_begin >= rec.drug_end:
                rejects.append((lineno, "empty span", line))
                continue
            try:
                records.append(_normalize_offsets(rec))
            except DataError as exc:
                rejects.append((lineno, str(exc), line))
    return records, rejects


def _spans_overlap(a, b):
    return a[0] < b[1] and b[0] < a[1]


def drop_overlaps(records):
    """Drop every record of any sentence where some drug span intersects
    some ADE span (e.g. a drug inside its own effect mention).

    Returns (kept, dropped) record lists; dropped covers whole sentences.
    """
    by_sentence = {}
    for rec in records:
        by_sentence.setdefault(rec.sentence_key, []).append(rec)
    kept, dropped = [], []
    for rec in records:
        group = by_sentence[rec.sentence_key]
        overlapping = any(_spans_overlap(a.drug_span, b.ade_span)
                          for a in group for b in group)
        (dropped if overlapping else kept).append(rec)
    return kept, dropped


def count_sentences(records):
    return len({rec.sentence_key for rec in records})


def _paint_span(labels, token_spans, begin, end, tag):
    """Mark BIO tags over the tokens covered by [begin, end)."""
    covered = [i for i, (_, ts, te) in enumerate(token_spans) if ts < end and te > begin]
    if not covered:
        raise DataError(f"span [{begin},{end}) covers no tokens")
    if token_spans[covered[0]][1] != begin or token_spans[covered[-1]][2] != end:
        raise DataError(
            f"span [{begin},{end}) does not align to token boundaries")
    labels[covered[0]] = f"B-{tag}"
    for i in covered[1:]:
        labels[i] = f"I-{tag}"
    return covered


def reformulate(records):
    """Group records by (sentence, drug) and emit one Sample per group.

    Entity labels cover every drug and ADE span annotated anywhere in the
    sentence (entity recognition does not depend on the query drug); ADE
    labels mark only the group's own effect spans. Misaligned spans
    quarantine the whole sample with a diagnostic.

    Returns (samples, quarantined) where quarantined holds (group_id, reason).
    """
    by_sentence = {}
    for rec in records:
        by_sentence.setdefault(rec.sentence_key, []).append(rec)

    samples, quarantined = [], []
    for s_idx, key in enumerate(sorted(by_sentence)):
        doc_id, sentence = key
        group_recs = by_sentence[key]
        token_spans = [(t, a, b) for t, a, b in tokenize(sentence)]
        tokens = [t for t, _, _ in token_spans]

        drug_spans = sorted({(r.drug_begin, r.drug_end, r.drug_text) for r in group_recs})
        ade_spans = sorted({(r.ade_begin, r.ade_end) for r in group_recs})

        by_drug = {}
        for rec in group_recs:
            by_drug.setdefault((rec.drug_begin, rec.drug_end, rec.drug_text), []).append(rec)

        # shared entity canvas for the sentence
        base_labels = ["O"] * len(tokens)
        try:
            for begin, end in ade_spans:
                _paint_span(base_labels, token_spans, begin, end, "Disease")
            drug_token_spans = {}
            for begin, end, text in drug_spans:
                covered = _paint_span(base_labels, token_spans, begin, end, "Drug")
                drug_token_spans[(begin, end, text)] = (covered[0], covered[-1] + 1)
        except DataError as exc:
            quarantined.extend((f"{doc_id}:{s_idx}:{d_idx}", str(exc))
                               for d_idx in range(len(by_drug)))
            continue

        for d_idx, drug_key in enumerate(sorted(by_drug)):
            sample_id = f"{doc_id}:{s_idx}:{d_idx}"
            ade_labels = [0] * len(tokens)
            try:
                for rec in sorted(by_drug[drug_key],
                                  key=lambda r: (r.ade_begin, r.ade_end, r.ade_text)):
                    covered = [i for i, (_, ts, te) in enumerate(token_spans)
                               if ts < rec.ade_end and te > rec.ade_begin]
                    for i in covered:
                        ade_labels[i] = 1
                sample = Sample(
                    id=sample_id,
                    tokens=list(tokens),
                    pos_tags=["<unk>"] * len(tokens),
                    entity_labels=list(base_labels),
                    drug_span=drug_token_spans[drug_key],
                    drug_text=drug_key[2],
                    ade_labels=ade_labels,
                )
                validate_sample(sample)
            except DataError as exc:
                quarantined.append((sample_id, str(exc)))
                continue
            samples.append(sample)
    return samples, quarantined


def split(samples, seed):
    """Deterministic 8:1:1 split by sentence so no sentence leaks across
    partitions. Returns (train, test, validation)."""
    def sentence_of(sample):
        # ids look like doc:sentence:drug; strip the drug component
        head, sep, _ = sample.id.rpartition(":")
        return head if sep else sample.id

    groups = {}
    for s in samples:
        groups.setdefault(sentence_of(s), []).append(s)
    keys = sorted(groups)
    rng = np.random.default_rng(seed)
    rng.shuffle(keys)

    n = len(keys)
    n_test = int(round(n * 0.1))
    n_val = int(round(n * 0.1))
    n_train = n - n_test - n_val
    buckets = {"train": keys[:n_train],
               "test": keys[n_train:n_train + n_test],
               "val": keys[n_train + n_test:]}

    def collect(bucket_keys):
        out = []
        for key in bucket_keys:
            out.extend(groups[key])
        return out

    return collect(buckets["train"]), collect(buckets["test"]), collect(buckets["val"])


def build_vocabs(train_samples):
    """Word/char/PoS maps from the training partition only."""
    tokens, tags = [], []
    for s in train_samples:
        tokens.extend(s.tokens)
        tags.extend(s.pos_tags)
    return Vocab.build(tokens, tags)


def write_jsonl(samples, path):
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), ensure_ascii=True) + "\n")


def read_jsonl(path):
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                sample = Sample.from_dict(d, fallback_id=str(lineno))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed sample ({exc})") from None
            samples.append(sample)
    return samples
