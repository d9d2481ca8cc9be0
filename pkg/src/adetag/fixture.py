"""Deterministic synthetic corpus for desk-scale experiments: ~60-word
vocabulary, 2 invented drugs, 4 diseases (one multi-token), sentence
templates with single- and two-drug causal structure."""

import numpy as np

from .data import Sample, validate_sample

DRUGS = ("zotramine", "velcadol")
DISEASES = ("headache", "nausea", "rash", "stomach pain")

# (word-or-slot, pos); slots: D* drug, A* disease caused by that drug
_SINGLE_TEMPLATES = [
    [("the", "DT"), ("patient", "NN"), ("took", "VBD"), ("D1", "NN"),
     ("and", "CC"), ("developed", "VBD"), ("A1", "NN"), (".", ".")],
    [("after", "IN"), ("D1", "NN"), ("therapy", "NN"), ("the", "DT"),
     ("subject", "NN"), ("reported", "VBD"), ("severe", "JJ"), ("A1", "NN"), (".", ".")],
    [("D1", "NN"), ("caused", "VBD"), ("acute", "JJ"), ("A1", "NN"),
     ("in", "IN"), ("one", "CD"), ("case", "NN"), (".", ".")],
    [("treatment", "NN"), ("with", "IN"), ("D1", "NN"), ("was", "VBD"),
     ("followed", "VBN"), ("by", "IN"), ("A1", "NN"), (".", ".")],
    [("a", "DT"), ("woman", "NN"), ("given", "VBN"), ("D1", "NN"),
     ("showed", "VBD"), ("signs", "NNS"), ("of", "IN"), ("A1", "NN"), (".", ".")],
    [("mild", "JJ"), ("A1", "NN"), ("appeared", "VBD"), ("days", "NNS"),
     ("after", "IN"), ("D1", "NN"), ("administration", "NN"), (".", ".")],
]

_DOUBLE_TEMPLATES = [
    [("D1", "NN"), ("induced", "VBD"), ("A1", "NN"), ("while", "IN"),
     ("D2", "NN"), ("induced", "VBD"), ("A2", "NN"), (".", ".")],
    [("the", "DT"), ("man", "NN"), ("developed", "VBD"), ("A1", "NN"),
     ("from", "IN"), ("D1", "NN"), ("and", "CC"), ("A2", "NN"),
     ("from", "IN"), ("D2", "NN"), (".", ".")],
]


def _disease_tokens(name):
    return name.split(" ")


def _render(template, slots):
    """Expand a template into (tokens, pos, entity_labels, ade_owner) where
    ade_owner[t] is the drug name whose effect the token is, or None."""
    tokens, pos, entity, owner = [], [], [], []
    drug_spans = {}
    for word, tag in template:
        if word.startswith("D"):
            drug = slots[word]
            drug_spans[drug] = (len(tokens), len(tokens) + 1)
            tokens.append(drug)
            pos.append(tag)
            entity.append("B-Drug")
            owner.append(None)
        elif word.startswith("A"):
            disease = slots[word]
            caused_by = slots["D" + word[1:]]
            for i, part in enumerate(_disease_tokens(disease)):
                tokens.append(part)
                pos.append(tag)
                entity.append("B-Disease" if i == 0 else "I-Disease")
                owner.append(caused_by)
        else:
            tokens.append(word)
            pos.append(tag)
            entity.append("O")
            owner.append(None)
    return tokens, pos, entity, owner, drug_spans


def _sentences(n_sentences, seed):
    """Deterministic list of rendered sentences, two-drug every 4th."""
    rng = np.random.default_rng(seed)
    rendered = []
    for i in range(n_sentences):
        if i % 4 == 3:
            template = _DOUBLE_TEMPLATES[(i // 4) % len(_DOUBLE_TEMPLATES)]
            d1, d2 = DRUGS if rng.random() < 0.5 else DRUGS[::-1]
            a1, a2 = rng.choice(len(DISEASES), size=2, replace=False)
            slots = {"D1": d1, "D2": d2,
                     "A1": DISEASES[a1], "A2": DISEASES[a2]}
        else:
            template = _SINGLE_TEMPLATES[i % len(_SINGLE_TEMPLATES)]
            slots = {"D1": DRUGS[int(rng.integers(len(DRUGS)))],
                     "A1": DISEASES[int(rng.integers(len(DISEASES)))]}
        rendered.append(_render(template, slots))
    return rendered


def corpus(n_samples=32, seed=7):
    """Exactly n_samples drug-conditioned samples; two-drug sentences
    contribute one sample per drug."""
    samples = []
    sentence_idx = 0
    batch = 0
    while len(samples) < n_samples:
        for tokens, pos, entity, owner, drug_spans in _sentences(16, seed + batch):
            for d_idx, drug in enumerate(sorted(drug_spans)):
                sample = Sample(
                    id=f"fx:{sentence_idx}:{d_idx}",
                    tokens=list(tokens),
                    pos_tags=list(pos),
                    entity_labels=list(entity),
                    drug_span=drug_spans[drug],
                    drug_text=drug,
                    ade_labels=[1 if o == drug else 0 for o in owner],
                )
                validate_sample(sample)
                samples.append(sample)
            sentence_idx += 1
            if len(samples) >= n_samples:
                break
        batch += 1
    return samples[:n_samples]


def raw_lines(n_sentences=16, seed=7, doc_base=90000):
    """The same generator rendered as pipe-delimited relation lines, one
    line per (drug, effect) pair, with character offsets."""
    lines = []
    for s_idx, (tokens, pos, entity, owner, drug_spans) in enumerate(
            _sentences(n_sentences, seed)):
        sentence = " ".join(tokens)
        offsets = []
        at = 0
        for tok in tokens:
            offsets.append((at, at + len(tok)))
            at += len(tok) + 1
        doc_id = str(doc_base + s_idx)
        for drug in sorted(drug_spans):
            d0, d1 = drug_spans[drug]
            db, de = offsets[d0][0], offsets[d1 - 1][1]
            spans = []
            start = None
            for t, o in enumerate(owner + [None]):
                if o == drug and start is None:
                    start = t
                elif o != drug and start is not None:
                    spans.append((start, t))
                    start = None
            for a0, a1 in spans:
                ab, ae = offsets[a0][0], offsets[a1 - 1][1]
                lines.append("|".join([
                    doc_id, sentence, sentence[ab:ae], str(ab), str(ae),
                    drug, str(db), str(de)]))
    return lines


def write_raw(path, n_sentences=16, seed=7):
    lines = raw_lines(n_sentences=n_sentences, seed=seed)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return len(lines)


if __name__ == "__main__":
    import sys

    target = sys.argv[1] if len(sys.argv) > 1 else "fixture.raw"
    count = write_raw(target)
    print(f"wrote {count} relation lines to {target}")
