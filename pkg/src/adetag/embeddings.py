"""Per-token input representation: paired fixed/trainable word embeddings,
char-CNN word vectors with max-over-time pooling, PoS embeddings, and the
label embedding table consumed by the prediction heads."""

import warnings

import numpy as np

from .autodiff import Tensor, concat, lookup, matmul, max_over_rows, stack, windows


class EmbeddingFileError(ValueError):
    pass


def read_word_vectors(path, expected_dim=None):
    """Parse a textual word2vec file: header "V d", then "word v1 .. vd".

    Returns (dim, {word: vector}). Duplicate words keep the first row.
    Malformed lines raise with their line number.
    """
    vectors = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise EmbeddingFileError(f"{path}:1: header must be 'V d', got {header!r}")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise EmbeddingFileError(f"{path}:1: non-integer header {header!r}") from None
        if expected_dim is not None and dim != expected_dim:
            raise EmbeddingFileError(
                f"{path}: vectors are {dim}-dimensional, expected {expected_dim}")
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise EmbeddingFileError(
                    f"{path}:{lineno}: expected word + {dim} values, got {len(parts)} fields")
            word = parts[0]
            try:
                vec = np.asarray([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError:
                raise EmbeddingFileError(f"{path}:{lineno}: non-numeric vector entry") from None
            vectors.setdefault(word, vec)
    if len(vectors) != count:
        warnings.warn(f"{path}: header advertises {count} vectors, parsed {len(vectors)}")
    return dim, vectors


def load_pretrained(path, vocab, dim, rng, init_low=-0.01, init_high=0.01,
                    allow_random=False):
    """Initialize the frozen/trainable word embedding pair from a file.

    Both instances start from the same rows: pretrained where the file covers
    the vocab word (matched lowercased), uniform random otherwise. Returns
    (emb_f, emb_v, covered_count). With allow_random and a missing file the
    whole matrix is random and a warning is emitted.
    """
    base = rng.uniform(init_low, init_high, size=(vocab.n_words, dim))
    covered = 0
    if path:
        try:
            _, vectors = read_word_vectors(path, expected_dim=dim)
        except FileNotFoundError:
            if not allow_random:
                raise
            warnings.warn(f"pretrained embeddings {path!r} missing; "
                          "falling back to random initialization")
            vectors = {}
        lowered = {}
        for word, vec in vectors.items():
            lowered.setdefault(word.lower(), vec)
        for word, idx in vocab.words.items():
            vec = lowered.get(word)
            if vec is not None:
                base[idx] = vec
                covered += 1
    emb_f = Tensor(base, requires_grad=False)
    emb_v = Tensor(base.copy(), requires_grad=True)
    return emb_f, emb_v, covered


class EmbeddingStack:
    """Owns all lookup tables plus the char-CNN filter banks.

    Char filter bank of width w holds char_dim*w filters, each spanning
    w consecutive char vectors, so the pooled char feature is
    sum(char_dim*w) across widths (525 at the default geometry).
    """

    def __init__(self, config, vocab, rng, pretrained_path=None):
        self.config = config
        self.vocab = vocab
        low, high = config.init_low, config.init_high

        self.emb_f, self.emb_v, self.pretrained_covered = load_pretrained(
            pretrained_path, vocab, config.word_dim, rng,
            init_low=low, init_high=high,
            allow_random=config.allow_random_embeddings)

        self.char_table = None
        self.char_filters = {}
        if config.char:
            self.char_table = Tensor(
                rng.uniform(low, high, size=(vocab.n_chars, config.char_dim)),
                requires_grad=True)
            for w in config.char_widths:
                receptive = w * config.char_dim
                n_filters = config.char_dim * w
                self.char_filters[w] = Tensor(
                    rng.uniform(low, high, size=(receptive, n_filters)),
                    requires_grad=True)
            assert self.char_feature_dim == sum(config.char_dim * w
                                                for w in config.char_widths)

        self.pos_table = None
        if config.pos:
            self.pos_table = Tensor(
                rng.uniform(low, high, size=(vocab.n_pos, config.pos_dim)),
                requires_grad=True)

        self.label_table = Tensor(
            rng.uniform(low, high, size=(vocab.n_labels, config.label_dim)),
            requires_grad=True)

    @property
    def char_feature_dim(self):
        return sum(f.shape[1] for f in self.char_filters.values())

    def parameters(self):
        named = {"emb_f": self.emb_f, "emb_v": self.emb_v}
        if self.char_table is not None:
            named["char_table"] = self.char_table
            for w in sorted(self.char_filters):
                named[f"char_filters_w{w}"] = self.char_filters[w]
        if self.pos_table is not None:
            named["pos_table"] = self.pos_table
        named["label_table"] = self.label_table
        return named

    def word_repr(self, word_id):
        """Frozen row then trainable row, concatenated."""
        return concat([lookup(self.emb_f, word_id), lookup(self.emb_v, word_id)])

    def char_repr(self, char_ids):
        """Char vectors stacked, zero-padded to the widest filter, convolved
        per width and max-pooled over time; widths concatenate in order."""
        if not char_ids:
            raise ValueError("char_repr of an empty word")
        rows = [lookup(self.char_table, cid) for cid in char_ids]
        widest = max(self.config.char_widths)
        pad = max(len(rows), widest) - len(rows)
        zero = Tensor(np.zeros(self.config.char_dim))
        rows.extend([zero] * pad)
        mat = stack(rows)
        pooled = []
        for w in self.config.char_widths:
            responses = matmul(windows(mat, w), self.char_filters[w])
            pooled.append(max_over_rows(responses))
        return concat(pooled)

    def pos_repr(self, pos_id):
        return lookup(self.pos_table, pos_id)

    def label_repr(self, label_id):
        return lookup(self.label_table, label_id)

    def token_features(self, token, pos_tag, word_only=False):
        """Feature vector for one token; ablation flags drop segments,
        word_only zeroes char/PoS while keeping the width."""
        parts = [self.word_repr(self.vocab.word_id(token))]
        if self.config.char:
            if word_only:
                parts.append(Tensor(np.zeros(self.char_feature_dim)))
            else:
                parts.append(self.char_repr(self.vocab.char_ids(token)))
        if self.config.pos:
            if word_only:
                parts.append(Tensor(np.zeros(self.config.pos_dim)))
            else:
                parts.append(self.pos_repr(self.vocab.pos_id(pos_tag)))
        return concat(parts)
