"""Finite-difference verification: one row per differentiable primitive,
plus the LSTM cell and the end-to-end loss on a tiny model."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, finite_diff_check
from .config import TrainConfig
from .data import build_vocabs
from .fixture import corpus
from .network import LstmParams, MODE_TEACHER, lstm_cell
from .trainer import init_params, zero_grads

OP_TOLERANCE = 1e-4
END_TO_END_TOLERANCE = 1e-3


@dataclass
class CheckRow:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def tiny_config():
    """Scaled-down geometry: hidden 4, word/char/pos/label dims 3/5/2/2,
    two char filter widths. Dropout off so the loss is deterministic, and
    a wide init so gradients sit far above finite-difference noise (the
    training-scale init leaves every activation in its linear regime and
    true gradients at the 1e-9 level, where central differences lose all
    their digits)."""
    return TrainConfig(
        word_dim=3, char_dim=5, char_widths=(1, 2), pos_dim=2, label_dim=2,
        hidden_dim=4, context_dim=6, dropout_rate=0.0, seed=17,
        init_low=-0.5, init_high=0.5,
        batch_size=4, max_epochs=1)


def _probe(rng, shape):
    return Tensor(rng.standard_normal(shape))


def _arg(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _build_matmul(rng):
    b, probe, x = _probe(rng, (4, 3)), _probe(rng, (5, 3)), _arg(rng, 5, 4)
    return lambda t: ad.sum_op(ad.mul(ad.matmul(t, b), probe)), x


def _build_concat(rng):
    other, probe, x = _probe(rng, 3), _probe(rng, 7), _arg(rng, 4)
    return lambda t: ad.sum_op(ad.mul(ad.concat([t, other]), probe)), x


def _build_stack(rng):
    other, probe, x = _probe(rng, 4), _probe(rng, (2, 4)), _arg(rng, 4)
    return lambda t: ad.sum_op(ad.mul(ad.stack([t, other]), probe)), x


def _build_segment(rng):
    probe, x = _probe(rng, 3), _arg(rng, 8)
    return lambda t: ad.sum_op(ad.mul(ad.segment(t, 2, 5), probe)), x


def _build_reshape(rng):
    probe, x = _probe(rng, (2, 3)), _arg(rng, 6)
    return lambda t: ad.sum_op(ad.mul(ad.reshape(t, (2, 3)), probe)), x


def _build_windows(rng):
    probe, x = _probe(rng, (5, 6)), _arg(rng, 6, 3)
    return lambda t: ad.sum_op(ad.mul(ad.windows(t, 2), probe)), x


def _build_max_over_rows(rng):
    probe, x = _probe(rng, 4), _arg(rng, 5, 4)
    return lambda t: ad.sum_op(ad.mul(ad.max_over_rows(t), probe)), x


def _build_softmax(rng):
    probe, x = _probe(rng, 6), _arg(rng, 6)
    return lambda t: ad.sum_op(ad.mul(ad.softmax(t), probe)), x


def _build_softmax_masked(rng):
    mask = np.array([True, False, True, True, False])
    probe, x = _probe(rng, 5), _arg(rng, 5)
    return lambda t: ad.sum_op(ad.mul(ad.softmax(t, mask=mask), probe)), x


def _build_tanh(rng):
    probe, x = _probe(rng, (3, 4)), _arg(rng, 3, 4)
    return lambda t: ad.sum_op(ad.mul(ad.tanh_op(t), probe)), x


def _build_sigmoid(rng):
    probe, x = _probe(rng, (3, 4)), _arg(rng, 3, 4)
    return lambda t: ad.sum_op(ad.mul(ad.sigmoid_op(t), probe)), x


def _build_add(rng):
    other, probe, x = _probe(rng, (3, 4)), _probe(rng, (3, 4)), _arg(rng, 3, 4)
    return lambda t: ad.sum_op(ad.mul(ad.add(t, other), probe)), x


def _build_mul(rng):
    other, probe, x = _probe(rng, (3, 4)), _probe(rng, (3, 4)), _arg(rng, 3, 4)
    return lambda t: ad.sum_op(ad.mul(ad.mul(t, other), probe)), x


def _build_scale(rng):
    probe, x = _probe(rng, 5), _arg(rng, 5)
    return lambda t: ad.scale(ad.sum_op(ad.mul(t, probe)), 0.73), x


def _build_sum(rng):
    return ad.sum_op, _arg(rng, 4, 2)


def _build_lookup(rng):
    probe, x = _probe(rng, 3), _arg(rng, 5, 3)
    return lambda t: ad.sum_op(ad.mul(ad.lookup(t, 2), probe)), x


def _build_dropout(rng):
    x = _arg(rng, 30)
    # fresh same-seeded generator per call keeps the mask fixed
    return (lambda t: ad.sum_op(ad.dropout(t, 0.5, True, np.random.default_rng(42))),
            x)


def _build_cross_entropy(rng):
    x = _arg(rng, 6)
    return lambda t: ad.cross_entropy(ad.softmax(t), 2), x


_OP_BUILDERS = [
    ("matmul", _build_matmul),
    ("concat", _build_concat),
    ("stack", _build_stack),
    ("segment", _build_segment),
    ("reshape", _build_reshape),
    ("windows", _build_windows),
    ("max_over_rows", _build_max_over_rows),
    ("softmax", _build_softmax),
    ("softmax_masked", _build_softmax_masked),
    ("tanh", _build_tanh),
    ("sigmoid", _build_sigmoid),
    ("add", _build_add),
    ("mul", _build_mul),
    ("scale", _build_scale),
    ("sum", _build_sum),
    ("lookup", _build_lookup),
    ("dropout", _build_dropout),
    ("cross_entropy", _build_cross_entropy),
]


def op_checks(seed=0, n_draws=3):
    """Finite-difference rows for every primitive; worst error over a few
    random draws each."""
    rows = []
    for op_idx, (name, build) in enumerate(_OP_BUILDERS):
        worst = 0.0
        for k in range(n_draws):
            rng = np.random.default_rng(seed + 1000 * op_idx + k)
            f, x = build(rng)
            worst = max(worst, finite_diff_check(f, x))
        rows.append(CheckRow(name, worst, OP_TOLERANCE))
    rows.append(lstm_cell_check(seed))
    return rows


def lstm_cell_check(seed=0):
    """Check the full cell against finite differences on every input and
    parameter tensor; a fixed random probe makes the output scalar."""
    worst = 0.0
    for k in range(2):
        rng = np.random.default_rng(seed + 77 + k)
        params = LstmParams(3, 4, rng, -0.5, 0.5)
        x0 = rng.standard_normal(3)
        h0 = rng.standard_normal(4) * 0.1
        c0 = rng.standard_normal(4) * 0.1
        probe_h = _probe(rng, 4)
        probe_c = _probe(rng, 4)

        def make(reader):
            def f(t):
                x, h_prev, c_prev = reader(t)
                h, c = lstm_cell(x, h_prev, c_prev, params)
                return ad.sum_op(ad.add(ad.mul(h, probe_h), ad.mul(c, probe_c)))
            return f

        cases = [
            (Tensor(x0.copy(), requires_grad=True),
             lambda t: (t, Tensor(h0), Tensor(c0))),
            (Tensor(h0.copy(), requires_grad=True),
             lambda t: (Tensor(x0), t, Tensor(c0))),
            (Tensor(c0.copy(), requires_grad=True),
             lambda t: (Tensor(x0), Tensor(h0), t)),
            (params.W, lambda t: (Tensor(x0), Tensor(h0), Tensor(c0))),
            (params.U, lambda t: (Tensor(x0), Tensor(h0), Tensor(c0))),
            (params.b, lambda t: (Tensor(x0), Tensor(h0), Tensor(c0))),
        ]
        for target, reader in cases:
            worst = max(worst, finite_diff_check(make(reader), target))
    return CheckRow("lstm_cell", worst, OP_TOLERANCE)


def end_to_end_check(n_coords=20, seed=0, h=1e-5):
    """Teacher-forced loss on a 2-sample tiny fixture, gradient of randomly
    sampled parameter coordinates vs central differences."""
    config = tiny_config()
    samples = corpus(n_samples=2, seed=11)
    vocab = build_vocabs(samples)
    model = init_params(config, vocab, rng=np.random.default_rng(config.seed))

    def loss_value():
        total = 0.0
        for s in samples:
            trace = model.forward(s, mode=MODE_TEACHER)
            total += model.sample_loss(trace, s).item()
        return total

    zero_grads(model.parameters())
    for s in samples:
        with Tape() as tape:
            trace = model.forward(s, mode=MODE_TEACHER)
            loss = model.sample_loss(trace, s)
        tape.backward(loss)

    named = model.trainable_parameters()
    rng = np.random.default_rng(seed)
    names = sorted(named)
    worst = 0.0
    for _ in range(n_coords):
        name = names[int(rng.integers(len(names)))]
        tensor = named[name]
        flat = tensor.data.reshape(-1)
        idx = int(rng.integers(flat.size))
        analytic = 0.0 if tensor.grad is None else float(tensor.grad.reshape(-1)[idx])
        orig = flat[idx]
        flat[idx] = orig + h
        fp = loss_value()
        flat[idx] = orig - h
        fm = loss_value()
        flat[idx] = orig
        numeric = (fp - fm) / (2 * h)
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, err)
    zero_grads(model.parameters())
    return CheckRow("end_to_end_loss", worst, END_TO_END_TOLERANCE)


def run_all(seed=0):
    rows = op_checks(seed)
    rows.append(end_to_end_check(seed=seed))
    return rows


def format_table(rows):
    lines = [f"{'op':<18} {'max_rel_err':>12} {'tolerance':>10} result"]
    for row in rows:
        verdict = "PASS" if row.passed else "FAIL"
        lines.append(f"{row.name:<18} {row.max_rel_error:>12.3e} "
                     f"{row.tolerance:>10.0e} {verdict}")
    return "\n".join(lines)
