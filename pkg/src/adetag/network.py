"""The model proper: BiLSTM encoder over sentence and drug query, bilinear
attention interaction, and the chained entity/ADE prediction heads.

One left-to-right pass per sample: at step t the entity head consumes the
previous label embedding, the attention-weighted context and the current
state; the ADE head consumes the encoded drug, a projected entity
representation and the embedding of the label chosen at t.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .autodiff import (
    ShapeMismatch,
    Tensor,
    add,
    add_n,
    concat,
    cross_entropy,
    dropout,
    matmul,
    mul,
    scale,
    segment,
    sigmoid_op,
    softmax,
    stack,
    tanh_op,
)
from .embeddings import EmbeddingStack

MODE_TEACHER = "train-teacher-forced"
MODE_FREE = "train-free-running"
MODE_INFERENCE = "inference"
MODES = (MODE_TEACHER, MODE_FREE, MODE_INFERENCE)


class CheckpointError(ValueError):
    pass


class LstmParams:
    """One direction's weights; gate blocks are laid out input, forget,
    cell, output along the 4H axis."""

    def __init__(self, input_dim, hidden_dim, rng, low, high):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.W = Tensor(rng.uniform(low, high, size=(4 * hidden_dim, input_dim)),
                        requires_grad=True)
        self.U = Tensor(rng.uniform(low, high, size=(4 * hidden_dim, hidden_dim)),
                        requires_grad=True)
        self.b = Tensor(rng.uniform(low, high, size=4 * hidden_dim),
                        requires_grad=True)


def lstm_cell(x, h_prev, c_prev, params):
    """Standard LSTM step: i,f,o sigmoid gates, tanh candidate,
    c = f*c_prev + i*g, h = o*tanh(c)."""
    hid = params.hidden_dim
    if x.shape != (params.input_dim,) or h_prev.shape != (hid,) or c_prev.shape != (hid,):
        raise ShapeMismatch(
            f"lstm_cell got x{x.shape}, h{h_prev.shape}, c{c_prev.shape} "
            f"for input_dim={params.input_dim}, hidden_dim={hid}")
    z = add(add(matmul(params.W, x), matmul(params.U, h_prev)), params.b)
    i = sigmoid_op(segment(z, 0, hid))
    f = sigmoid_op(segment(z, hid, 2 * hid))
    g = tanh_op(segment(z, 2 * hid, 3 * hid))
    o = sigmoid_op(segment(z, 3 * hid, 4 * hid))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh_op(c))
    return h, c


def bilstm(features, fwd, bwd, dropout_rate=0.0, training=False, rng=None):
    """Run both directions from zero initial state; dropout hits cell
    inputs and emitted states, never the recurrent connections.

    Returns (fwd_states, bwd_states) index-aligned with the input.
    """
    if not features:
        raise ValueError("bilstm over an empty sequence")
    xs = [dropout(x, dropout_rate, training, rng) for x in features]

    def run(params, sequence):
        h = Tensor(np.zeros(params.hidden_dim))
        c = Tensor(np.zeros(params.hidden_dim))
        states = []
        for x in sequence:
            h, c = lstm_cell(x, h, c, params)
            states.append(h)
        return states

    fwd_states = run(fwd, xs)
    bwd_states = run(bwd, list(reversed(xs)))[::-1]
    fwd_states = [dropout(h, dropout_rate, training, rng) for h in fwd_states]
    bwd_states = [dropout(h, dropout_rate, training, rng) for h in bwd_states]
    return fwd_states, bwd_states


@dataclass
class EncodedSequence:
    states: list           # T tensors of 2H, concat(fwd, bwd) per step
    fwd: list
    bwd: list
    mask: list             # valid-token flags
    _stacked: Tensor = field(default=None, repr=False)

    def stacked(self):
        if self._stacked is None:
            self._stacked = stack(self.states)
        return self._stacked

    def __len__(self):
        return len(self.states)


@dataclass
class DrugEncoding:
    h_drug: Tensor         # concat(final forward state, final backward state)


@dataclass
class ForwardTrace:
    entity_dists: list     # T distributions over the label set
    ade_dists: list        # T distributions over {0, 1}
    attention: np.ndarray  # T x T, rows are mixing weights (None if ablated)
    predicted_labels: list
    encoded: EncodedSequence

    def predicted_ades(self):
        return [int(np.argmax(d.data)) for d in self.ade_dists]


class Model:
    """Holds every trainable tensor and implements the forward pass."""

    def __init__(self, config, vocab, rng, pretrained_path=None):
        self.config = config
        self.vocab = vocab
        low, high = config.init_low, config.init_high
        self.embeddings = EmbeddingStack(config, vocab, rng,
                                         pretrained_path=pretrained_path)
        d_in = config.token_feature_dim
        state = config.state_dim
        self.fwd = LstmParams(d_in, config.hidden_dim, rng, low, high)
        self.bwd = LstmParams(d_in, config.hidden_dim, rng, low, high)

        self.W_a = None
        if config.attention:
            self.W_a = Tensor(rng.uniform(low, high, size=(state, state)),
                              requires_grad=True)

        ent_in = config.label_dim + 2 * state
        self.W_ent = Tensor(rng.uniform(low, high, size=(ent_in, vocab.n_labels)),
                            requires_grad=True)
        self.b_ent = Tensor(rng.uniform(low, high, size=vocab.n_labels),
                            requires_grad=True)
        self.W_c = Tensor(rng.uniform(low, high, size=(ent_in, config.context_dim)),
                          requires_grad=True)
        self.b_c = Tensor(rng.uniform(low, high, size=config.context_dim),
                          requires_grad=True)
        ade_in = state + config.context_dim + config.label_dim
        self.W_ade = Tensor(rng.uniform(low, high, size=(ade_in, 2)),
                            requires_grad=True)
        self.b_ade = Tensor(rng.uniform(low, high, size=2), requires_grad=True)

    def parameters(self):
        """Name -> tensor, in a stable order (drives init, step, checkpoint)."""
        named = dict(self.embeddings.parameters())
        for prefix, lstm in (("lstm_fwd", self.fwd), ("lstm_bwd", self.bwd)):
            named[f"{prefix}_W"] = lstm.W
            named[f"{prefix}_U"] = lstm.U
            named[f"{prefix}_b"] = lstm.b
        if self.W_a is not None:
            named["W_a"] = self.W_a
        named.update({"W_ent": self.W_ent, "b_ent": self.b_ent,
                      "W_c": self.W_c, "b_c": self.b_c,
                      "W_ade": self.W_ade, "b_ade": self.b_ade})
        return named

    def trainable_parameters(self):
        return {k: t for k, t in self.parameters().items() if t.requires_grad}

    # encoding -------------------------------------------------------------
    def _features(self, tokens, pos_tags, word_only=False):
        return [self.embeddings.token_features(tok, tag, word_only=word_only)
                for tok, tag in zip(tokens, pos_tags)]

    def encode(self, tokens, pos_tags, training=False, rng=None):
        feats = self._features(tokens, pos_tags)
        fwd_states, bwd_states = bilstm(
            feats, self.fwd, self.bwd,
            dropout_rate=self.config.dropout_rate, training=training, rng=rng)
        states = [concat([f, b]) for f, b in zip(fwd_states, bwd_states)]
        return EncodedSequence(states=states, fwd=fwd_states, bwd=bwd_states,
                               mask=[True] * len(states))

    def encode_drug(self, drug_tokens, drug_pos, training=False, rng=None):
        """Same encoder weights as the sentence run; final state per direction."""
        feats = self._features(drug_tokens, drug_pos,
                               word_only=self.config.drug_word_only)
        fwd_states, bwd_states = bilstm(
            feats, self.fwd, self.bwd,
            dropout_rate=self.config.dropout_rate, training=training, rng=rng)
        return DrugEncoding(h_drug=concat([fwd_states[-1], bwd_states[0]]))

    # interaction ----------------------------------------------------------
    def attend(self, enc, t):
        """Bilinear scores of state t against every state (self included),
        softmax-normalized into mixing weights; returns (context, weights)."""
        h_t = enc.states[t]
        q = matmul(h_t, self.W_a)          # h_t^T W_a
        scores = matmul(enc.stacked(), q)  # score_j = h_t^T W_a h_j
        a_t = softmax(scores, mask=np.asarray(enc.mask))
        h_bar = matmul(a_t, enc.stacked())
        return h_bar, a_t

    # prediction -----------------------------------------------------------
    def entity_step(self, enc, t, prev_label_id, h_bar=None):
        """Distribution over entity labels at step t; h_bar defaults to the
        attention context (or the state itself when attention is ablated)."""
        h_t = enc.states[t]
        if h_bar is None:
            h_bar = self.attend(enc, t)[0] if self.config.attention else h_t
        r_ent = concat([self.embeddings.label_repr(prev_label_id), h_bar, h_t])
        logits = tanh_op(add(matmul(r_ent, self.W_ent), self.b_ent))
        return softmax(logits), r_ent

    def ade_step(self, r_ent, label_id, drug):
        """Binary ADE distribution from the projected entity representation,
        the encoded drug, and the label embedding of the current choice."""
        r_bar = add(matmul(r_ent, self.W_c), self.b_c)  # affine, no nonlinearity
        r_ade = concat([drug.h_drug, r_bar, self.embeddings.label_repr(label_id)])
        logits = add(matmul(r_ade, self.W_ade), self.b_ade)
        return softmax(logits)

    def forward(self, sample, mode=MODE_INFERENCE, rng=None):
        """Single pass over t = 0..T-1 chaining entity and ADE heads.

        Teacher-forced mode feeds gold labels into both heads; otherwise the
        argmax prediction is embedded (no gradient through the choice).
        """
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        training = mode != MODE_INFERENCE
        if training and self.config.dropout_rate > 0 and rng is None:
            raise ValueError("training-mode forward needs an rng for dropout")
        if not sample.tokens:
            raise ValueError(f"sample {sample.id}: empty token sequence")

        enc = self.encode(sample.tokens, sample.pos_tags, training=training, rng=rng)
        drug = self.encode_drug(sample.drug_tokens,
                                sample.pos_tags[sample.drug_span[0]:sample.drug_span[1]],
                                training=training, rng=rng)

        T = len(enc)
        teacher = mode == MODE_TEACHER
        gold_ids = None
        if teacher:
            gold_ids = [self.vocab.label_id(l) for l in sample.entity_labels]

        entity_dists, ade_dists, predicted = [], [], []
        attention = np.zeros((T, T)) if self.config.attention else None
        prev_id = self.vocab.start_label_id
        for t in range(T):
            if self.config.attention:
                h_bar, a_t = self.attend(enc, t)
                attention[t] = a_t.data
            else:
                h_bar = enc.states[t]
            dist, r_ent = self.entity_step(enc, t, prev_id, h_bar=h_bar)
            pred_id = int(np.argmax(dist.data))
            predicted.append(pred_id)
            current_id = gold_ids[t] if teacher else pred_id
            ade_dists.append(self.ade_step(r_ent, current_id, drug))
            entity_dists.append(dist)
            prev_id = gold_ids[t] if teacher else pred_id

        return ForwardTrace(entity_dists=entity_dists, ade_dists=ade_dists,
                            attention=attention, predicted_labels=predicted,
                            encoded=enc)

    def sample_loss(self, trace, sample):
        """Mean over tokens of entity cross-entropy plus (weighted) ADE
        cross-entropy."""
        terms = []
        w = self.config.ade_loss_weight
        for t, (ent_dist, ade_dist) in enumerate(zip(trace.entity_dists, trace.ade_dists)):
            ent_ce = cross_entropy(ent_dist, self.vocab.label_id(sample.entity_labels[t]))
            ade_ce = cross_entropy(ade_dist, sample.ade_labels[t])
            if w != 1.0:
                ade_ce = scale(ade_ce, w)
            terms.append(add(ent_ce, ade_ce))
        return scale(add_n(terms), 1.0 / len(terms))


# checkpoint io -------------------------------------------------------------

def save_checkpoint(prefix, model):
    """Write <prefix>.json (manifest), <prefix>.bin (little-endian float64
    blob) and <prefix>.vocab.json. Deterministic bytes for fixed params."""
    params = model.parameters()
    entries = []
    offset = 0
    blob = bytearray()
    for name in sorted(params):
        tensor = params[name]
        raw = tensor.data.astype("<f8").tobytes()
        entries.append({"name": name, "shape": list(tensor.shape),
                        "offset": offset, "bytes": len(raw),
                        "requires_grad": tensor.requires_grad})
        blob.extend(raw)
        offset += len(raw)
    manifest = {
        "format": "adetag-checkpoint-v1",
        "engine_version": __version__,
        "config": model.config.to_dict(),
        "vocab_digest": model.vocab.digest(),
        "tensors": entries,
    }
    with open(f"{prefix}.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=0)
    with open(f"{prefix}.bin", "wb") as fh:
        fh.write(bytes(blob))
    model.vocab.save(f"{prefix}.vocab.json")
    return [f"{prefix}.json", f"{prefix}.bin", f"{prefix}.vocab.json"]


def load_checkpoint(prefix):
    """Rebuild a Model from a checkpoint prefix; rejects shape or
    vocab-hash mismatches."""
    from .config import TrainConfig
    from .vocab import Vocab

    with open(f"{prefix}.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "adetag-checkpoint-v1":
        raise CheckpointError(f"{prefix}.json: unrecognized checkpoint format")
    vocab = Vocab.load(f"{prefix}.vocab.json")
    if vocab.digest() != manifest["vocab_digest"]:
        raise CheckpointError(
            f"{prefix}: vocab file digest does not match checkpoint manifest")
    config = TrainConfig.from_dict(manifest["config"])
    model = Model(config, vocab, np.random.default_rng(0))
    params = model.parameters()
    with open(f"{prefix}.bin", "rb") as fh:
        blob = fh.read()
    seen = set()
    for entry in manifest["tensors"]:
        name = entry["name"]
        if name not in params:
            raise CheckpointError(f"{prefix}: unexpected tensor {name!r}")
        tensor = params[name]
        shape = tuple(entry["shape"])
        if tensor.shape != shape:
            raise CheckpointError(
                f"{prefix}: tensor {name!r} has shape {shape}, model expects {tensor.shape}")
        count = int(np.prod(shape)) if shape else 1
        raw = blob[entry["offset"]:entry["offset"] + entry["bytes"]]
        if len(raw) != count * 8:
            raise CheckpointError(f"{prefix}: tensor {name!r} byte range out of bounds")
        tensor.data = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise CheckpointError(f"{prefix}: checkpoint lacks tensors {sorted(missing)}")
    return model
