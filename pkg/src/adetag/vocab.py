"""Token/char/PoS/label id maps with stable reserved ids."""

import hashlib
import json

WORD_PAD = "<pad>"
WORD_UNK = "<unk>"
CHAR_PAD = "<pad>"
CHAR_UNK = "<unk>"
POS_UNK = "<unk>"
START_LABEL = "<start>"

# fixed BIO label set over {Drug, Disease}; <start> seeds the label chain
ENTITY_LABELS = ("O", "B-Drug", "I-Drug", "B-Disease", "I-Disease", START_LABEL)


class Vocab:
    """Word ids are looked up lowercased; chars keep their original casing.
    Unseen items map to the <unk> id, never an error."""

    def __init__(self, words, chars, pos):
        self.words = dict(words)
        self.chars = dict(chars)
        self.pos = dict(pos)
        self.labels = {lab: i for i, lab in enumerate(ENTITY_LABELS)}

    @classmethod
    def build(cls, tokens, pos_tags):
        """Dense maps from training tokens/tags, reserved ids first."""
        words = {WORD_PAD: 0, WORD_UNK: 1}
        chars = {CHAR_PAD: 0, CHAR_UNK: 1}
        pos = {POS_UNK: 0}
        for tok in tokens:
            low = tok.lower()
            if low not in words:
                words[low] = len(words)
            for ch in tok:
                if ch not in chars:
                    chars[ch] = len(chars)
        for tag in pos_tags:
            if tag not in pos:
                pos[tag] = len(pos)
        return cls(words, chars, pos)

    @property
    def n_words(self):
        return len(self.words)

    @property
    def n_chars(self):
        return len(self.chars)

    @property
    def n_pos(self):
        return len(self.pos)

    @property
    def n_labels(self):
        return len(self.labels)

    @property
    def start_label_id(self):
        return self.labels[START_LABEL]

    def word_id(self, token):
        return self.words.get(token.lower(), self.words[WORD_UNK])

    def char_ids(self, token):
        unk = self.chars[CHAR_UNK]
        return [self.chars.get(ch, unk) for ch in token]

    def pos_id(self, tag):
        return self.pos.get(tag, self.pos[POS_UNK])

    def label_id(self, label):
        return self.labels[label]

    def label_name(self, label_id):
        return ENTITY_LABELS[label_id]

    def to_dict(self):
        return {"words": self.words, "chars": self.chars, "pos": self.pos}

    @classmethod
    def from_dict(cls, d):
        return cls(d["words"], d["chars"], d["pos"])

    def digest(self):
        """Stable content hash, for checkpoint/vocab pairing checks."""
        canon = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=True)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, ensure_ascii=True)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
