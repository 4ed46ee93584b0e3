"""Constraint builders that collapse each architecture onto the next one down.

Three constructions, each taking the *inner* cell's trained-or-random weights
and producing a constrained *outer* cell whose hidden trajectory is identical
on every input sequence:

- ram->stack: memory row i carries alpha^i times stack slot i; the write mixes
  neighbouring rows with amplitudes (alpha*push, pop/alpha, keep) and the read
  weights put everything on row 0 scaled by the stack's read gate (remaining
  weights zero, so they sum to <= 1 rather than exactly 1).
- stack->lstm: a stack whose pop signal is structurally zero, so only slot 0
  ever carries information; push/no-op signals are computed by the inner
  cell's input/forget gate equations and the read gate by its output gate.
- lstm->rnn: input gate pinned to 1, forget gate to 0, candidate path fixed to
  the identity (unit candidate weights, zero bias, identity activation), so
  the read vector delivers h_{t-1} and the recurrent weights take over.

Pins are structural constants, not saturated sigmoids, making the equality
exact; the 1e-10 verifier tolerance only absorbs floating-point reassociation
(e.g. when alpha is not a power of two).  All remaining weights are shared
with the inner cell bit for bit.

Note on the output-gate pin: damping the read vector to zero would sever the
recurrent path entirely, so the lstm->rnn construction pins the output gate to
1.0 - the value under which the read path delivers the memory content
unchanged.  Verifier reports carry this note.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cells as cl
from . import numcore as nc
from .numcore import Tape

TOLERANCE = 1e-10

PAIRS = ("ram-stack", "stack-lstm", "lstm-rnn", "chain")

OUTPUT_GATE_NOTE = (
    "output gate pinned to 1.0, the value under which the read path delivers "
    "the memory content unchanged; pinning it to 0 would zero the recurrent path"
)


@dataclass
class Reduction:
    """A constrained outer cell, the inner cell it simulates, and the dims."""

    pair: str
    outer: object
    inner: object
    dim_map: dict
    notes: str = ""
    stages: dict = None  # intermediate cells for composed (chain) reductions


# ---------------------------------------------------------------------------
# lstm -> rnn


class PinnedLstmCell:
    """LSTM with g_i=1, g_f=0, g_o=1 and an identity candidate path.

    Carries the inner rnn's weights verbatim: w_xh stays the input map, the
    rnn's recurrent matrix rides on the read path (w_rh), and the candidate
    weights are the identity so the memory reproduces h_{t-1} exactly.
    """

    arch = "lstm"

    def __init__(self, rnn_config, rnn_params):
        kh = rnn_config.k_hidden
        self.config = cl.LstmConfig(
            k_in=rnn_config.k_in,
            k_hidden=kh,
            k_out=rnn_config.k_out,
            n_mem=kh,
            hidden_activation=rnn_config.hidden_activation,
            candidate_activation="identity",
        )
        self.params = {
            "w_hc": np.eye(kh),
            "b_c": np.zeros((kh, 1)),
            "w_xh": rnn_params["w_xh"],
            "w_rh": rnn_params["w_hh"],
            "b_h": rnn_params["b_h"],
            "w_ho": rnn_params["w_ho"],
            "b_o": rnn_params["b_o"],
        }

    def bind(self, tape):
        return {k: tape.leaf(v) for k, v in self.params.items()}

    def init_state(self, tape):
        return (tape.zeros(self.config.k_hidden), tape.zeros(self.config.n_mem))

    def step(self, tape, p, state, x, trace=None):
        h, m = state
        act = cl.ACTIVATIONS[self.config.hidden_activation]
        c = nc.affine(p["w_hc"], h, p["b_c"])  # identity activation
        g_i = tape.scalar(1.0)
        g_f = tape.scalar(0.0)
        g_o = tape.scalar(1.0)
        m2 = nc.add(nc.smul(g_i, c), nc.smul(g_f, m))
        r = nc.smul(g_o, m2)
        h2 = act(nc.affine2(p["w_xh"], x, p["w_rh"], r, p["b_h"]))
        out = nc.affine(p["w_ho"], h2, p["b_o"])
        if trace is not None:
            trace["hidden"] = h2.data
            trace["memory"] = m2.data
            trace["output"] = out.data
        return (h2, m2), out


def constrain_lstm_to_rnn(rnn_config, rnn_params):
    inner = cl.RnnCell(rnn_config, rnn_params)
    outer = PinnedLstmCell(rnn_config, rnn_params)
    return Reduction(
        pair="lstm-rnn",
        outer=outer,
        inner=inner,
        dim_map={
            "k_hidden": rnn_config.k_hidden,
            "n_mem": rnn_config.k_hidden,
        },
        notes=OUTPUT_GATE_NOTE,
    )


# ---------------------------------------------------------------------------
# stack -> lstm

# A "gate program" tells the constrained outer cells how the inner cell
# computes its control values from (h_{t-1}, x_t): either a sigmoid affine
# over named weights, or a structural constant (for chained reductions whose
# inner cell is itself pinned).


class LstmGateProgram:
    """Controls of an LSTM (possibly pinned), used to drive stack/ram shells.

    push <- input gate, no-op <- forget gate, pop <- structural zero,
    read gate <- output gate, candidate <- the LSTM's candidate equation.
    """

    controls_before_hidden = True

    def __init__(self, lstm_config, pins=None):
        self.config = lstm_config
        self.pins = pins or {}

    def gate(self, tape, p, name, h, x):
        if name in self.pins:
            return tape.scalar(self.pins[name])
        return nc.sigmoid(
            nc.affine2(p["w_%s_h" % name], h, p["w_%s_x" % name], x, p["b_%s" % name])
        )

    def controls(self, tape, p, h, x):
        act_c = cl.ACTIVATIONS[self.config.candidate_activation]
        if self.config.candidate_uses_input:
            cand = act_c(nc.affine2(p["w_hc"], h, p["w_xc"], x, p["b_c"]))
        else:
            cand = act_c(nc.affine(p["w_hc"], h, p["b_c"]))
        d_push = self.gate(tape, p, "gi", h, x)
        d_pop = tape.scalar(0.0)
        d_noop = self.gate(tape, p, "gf", h, x)
        g_read = self.gate(tape, p, "go", h, x)
        return (d_push, d_pop, d_noop), cand, g_read


class StackGateProgram:
    """Controls of the trainable stack itself (used by the ram->stack shell).

    The stack computes its push/pop/no-op signals and candidate from the
    *current* hidden state; the read gate comes from (h_{t-1}, x_t) unless the
    configuration pins it to 1.
    """

    controls_before_hidden = False

    def __init__(self, stack_config):
        self.config = stack_config

    def controls(self, tape, p, h_cur, h_prev, x):
        act_c = cl.ACTIVATIONS[self.config.candidate_activation]
        d = nc.sigmoid(nc.affine(p["w_hd"], h_cur, p["b_op"]))
        d_push = nc.slice_rows(d, 0, 1)
        d_pop = nc.slice_rows(d, 1, 2)
        d_noop = nc.slice_rows(d, 2, 3)
        cand = act_c(nc.affine(p["w_hc"], h_cur, p["b_c"]))
        if self.config.read_gate_fixed:
            g_read = tape.scalar(1.0)
        else:
            g_read = nc.sigmoid(
                nc.affine2(p["w_go_h"], h_prev, p["w_go_x"], x, p["b_go"])
            )
        return (d_push, d_pop, d_noop), cand, g_read


class ConstrainedStackCell:
    """Stack shell driven by an inner LSTM's gate program (pop pinned to 0)."""

    arch = "stack"

    def __init__(self, program, params, max_depth=64):
        self.program = program
        self.params = params
        self.max_depth = max_depth
        self.config = program.config

    def bind(self, tape):
        return {k: tape.leaf(v) for k, v in self.params.items()}

    def init_state(self, tape):
        cfg = self.config
        word = cfg.n_mem
        return (
            tape.zeros(cfg.k_hidden),
            tape.zeros(word),
            tape.zeros(1, word),
        )

    def step(self, tape, p, state, x, trace=None):
        h, r, slots = state
        cfg = self.config
        act = cl.ACTIVATIONS[cfg.hidden_activation]
        (d_push, d_pop, d_noop), cand, g_read = self.program.controls(tape, p, h, x)
        d = nc.concat_rows([d_push, d_pop, d_noop])
        slots2 = cl.stack_update(tape, slots, d, cand, self.max_depth)
        top = nc.transpose(nc.slice_rows(slots2, 0, 1))
        r2 = nc.smul(g_read, top)
        h2 = act(nc.affine2(p["w_xh"], x, p["w_rh"], r2, p["b_h"]))
        if getattr(cfg, "output_from_memory", False):
            out = nc.affine(p["w_mo"], top, p["b_o"])
        else:
            out = nc.affine(p["w_ho"], h2, p["b_o"])
        if trace is not None:
            trace["hidden"] = h2.data
            trace["stack"] = slots2.data
            trace["read"] = r2.data
            trace["output"] = out.data
        return (h2, r2, slots2), out


def constrain_stack_to_lstm(lstm_config, lstm_params, pins=None):
    inner = cl.LstmCell(lstm_config, lstm_params)
    program = LstmGateProgram(lstm_config, pins)
    outer = ConstrainedStackCell(program, lstm_params)
    return Reduction(
        pair="stack-lstm",
        outer=outer,
        inner=inner,
        dim_map={
            "k_hidden": lstm_config.k_hidden,
            "word": lstm_config.n_mem,
            "pop": 0.0,
        },
    )


# ---------------------------------------------------------------------------
# ram -> stack


class ConstrainedRamCell:
    """RAM shell simulating a stack: row i holds alpha^i times stack slot i.

    The write mixes neighbouring rows - alpha*push pulls content one row down,
    pop/alpha pulls it one row up, no-op keeps it in place - and row 0 takes
    the freshly pushed candidate.  The read weights are (read gate, 0, ..., 0),
    entries in [0, 1] summing to <= 1.  Raises StackDepthError when content
    would run off the last row.
    """

    arch = "ram"

    def __init__(self, program, params, rows, alpha=1.0):
        if not (0.0 < alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1], got %r" % (alpha,))
        self.program = program
        self.params = params
        self.rows = rows
        self.alpha = alpha
        self.config = program.config

    def bind(self, tape):
        return {k: tape.leaf(v) for k, v in self.params.items()}

    def _word(self):
        cfg = self.config
        return cfg.word if hasattr(cfg, "word") else cfg.n_mem

    def init_state(self, tape):
        cfg = self.config
        # depth counter rides along to detect content running off the end
        return (
            tape.zeros(cfg.k_hidden),
            tape.zeros(self.rows, self._word()),
            tape.zeros(self._word()),
            1,
        )

    def _write(self, tape, mem, cand, d_push, d_pop, d_noop):
        """The alpha-scaled neighbour-mixing write, one node per term."""
        rows = self.rows
        alpha = self.alpha
        down = nc.concat_rows([nc.transpose(cand), nc.slice_rows(mem, 0, rows - 1)])
        up = nc.concat_rows([nc.slice_rows(mem, 1, rows), tape.zeros(1, self._word())])
        scale_down = d_push if alpha == 1.0 else nc.smul(tape.scalar(alpha), d_push)
        scale_up = d_pop if alpha == 1.0 else nc.smul(tape.scalar(1.0 / alpha), d_pop)
        # row 0 of `down` must carry d_push * cand unscaled by alpha
        if alpha == 1.0:
            mixed = nc.add(nc.smul(scale_down, down), nc.smul(scale_up, up))
        else:
            head = nc.smul(d_push, nc.slice_rows(down, 0, 1))
            tail = nc.smul(scale_down, nc.slice_rows(down, 1, rows))
            mixed = nc.add(nc.concat_rows([head, tail]), nc.smul(scale_up, up))
        return nc.add(mixed, nc.smul(d_noop, mem))

    def step(self, tape, p, state, x, trace=None):
        h, mem, r_prev, depth = state
        cfg = self.config
        act = cl.ACTIVATIONS[cfg.hidden_activation]
        if depth + 1 > self.rows:
            raise cl.StackDepthError(
                "simulated stack depth %d exceeds %d memory rows"
                % (depth + 1, self.rows)
            )
        program = self.program
        if program.controls_before_hidden:
            (d_push, d_pop, d_noop), cand, g_read = program.controls(tape, p, h, x)
            mem2 = self._write(tape, mem, cand, d_push, d_pop, d_noop)
            a = nc.concat_rows([g_read, tape.zeros(self.rows - 1)])
            r = nc.matmul(nc.transpose(mem2), a)
            h2 = act(nc.affine2(p["w_xh"], x, p["w_rh"], r, p["b_h"]))
        else:
            h2 = act(nc.affine2(p["w_xh"], x, p["w_rh"], r_prev, p["b_h"]))
            (d_push, d_pop, d_noop), cand, g_read = program.controls(tape, p, h2, h, x)
            mem2 = self._write(tape, mem, cand, d_push, d_pop, d_noop)
            a = nc.concat_rows([g_read, tape.zeros(self.rows - 1)])
            r = nc.matmul(nc.transpose(mem2), a)
        out = nc.affine(p["w_ho"], h2, p["b_o"])
        if trace is not None:
            trace["hidden"] = h2.data
            trace["memory"] = mem2.data
            trace["read_weights"] = a.data
            trace["read"] = r.data
            trace["output"] = out.data
        return (h2, mem2, r, depth + 1), out


def constrain_ram_to_stack(stack_config, stack_params, rows, alpha=1.0):
    inner = cl.StackCell(stack_config, stack_params)
    program = StackGateProgram(stack_config)
    outer = ConstrainedRamCell(program, stack_params, rows, alpha)
    return Reduction(
        pair="ram-stack",
        outer=outer,
        inner=inner,
        dim_map={
            "k_hidden": stack_config.k_hidden,
            "word": stack_config.word,
            "rows": rows,
            "alpha": alpha,
        },
    )


def constrain_chain(rnn_config, rnn_params, rows, alpha=1.0):
    """rnn -> pinned lstm -> constrained stack -> constrained ram, composed.

    Each stage inherits the previous stage's pins, so the final ram carries
    the rnn weights bit-for-bit with every gate structurally fixed.  The
    intermediate cells ride along in `stages` so transitivity can be checked
    link by link.
    """
    lstm_stage = constrain_lstm_to_rnn(rnn_config, rnn_params)
    pins = {"gi": 1.0, "gf": 0.0, "go": 1.0}
    lstm_cfg = lstm_stage.outer.config
    lstm_par = lstm_stage.outer.params
    program = LstmGateProgram(lstm_cfg, pins)
    stack_stage = ConstrainedStackCell(program, lstm_par)
    outer = ConstrainedRamCell(program, lstm_par, rows, alpha)
    return Reduction(
        pair="chain",
        outer=outer,
        inner=lstm_stage.inner,
        dim_map={
            "k_hidden": rnn_config.k_hidden,
            "word": rnn_config.k_hidden,
            "rows": rows,
            "alpha": alpha,
        },
        notes=OUTPUT_GATE_NOTE,
        stages={"lstm": lstm_stage.outer, "stack": stack_stage, "ram": outer},
    )


# ---------------------------------------------------------------------------
# the verifier


INNER_CONFIGS = {
    "lstm-rnn": cl.RnnConfig(k_in=3, k_hidden=4, k_out=3),
    "stack-lstm": cl.LstmConfig(k_in=3, k_hidden=4, k_out=3, n_mem=3),
    "ram-stack": cl.StackConfig(k_in=3, k_hidden=4, k_out=3, word=3),
    "chain": cl.RnnConfig(k_in=3, k_hidden=4, k_out=3),
}


def build_reduction(pair, seed, length, alpha=1.0):
    cfg = INNER_CONFIGS[pair]
    params = cl.init_params(cfg, seed=[seed, 0], scheme="raw")
    rows = length + 2
    if pair == "lstm-rnn":
        return constrain_lstm_to_rnn(cfg, params)
    if pair == "stack-lstm":
        return constrain_stack_to_lstm(cfg, params)
    if pair == "ram-stack":
        return constrain_ram_to_stack(cfg, params, rows, alpha)
    if pair == "chain":
        return constrain_chain(cfg, params, rows, alpha)
    raise ValueError("unknown pair %r" % (pair,))


def trajectory(cell, inputs):
    """Hidden-state matrix (T, k_hidden) of a cell over raw input rows."""
    tape = Tape()
    p = cell.bind(tape)
    state = cell.init_state(tape)
    rows = []
    for t in range(inputs.shape[0]):
        state, _ = cell.step(tape, p, state, tape.leaf(inputs[t].reshape(-1, 1)))
        rows.append(state[0].data[:, 0])
    if not rows:
        return np.zeros((0, 1))
    return np.array(rows)


def deviation(reduction, inputs):
    """Max per-step absolute hidden-state difference, outer vs inner."""
    outer = trajectory(reduction.outer, inputs)
    inner = trajectory(reduction.inner, inputs)
    if outer.size == 0:
        return 0.0
    return float(np.abs(outer - inner).max())


def verify_equivalence(pair, length=20, seeds=50, alpha=1.0, tolerance=TOLERANCE):
    """Run outer vs inner on random weights and inputs; report deviations."""
    if pair not in PAIRS:
        raise ValueError("unknown pair %r; choose from %s" % (pair, list(PAIRS)))
    if seeds < 1:
        raise ValueError("need at least one seed")
    per_seed = []
    notes = ""
    for seed in range(1, seeds + 1):
        red = build_reduction(pair, seed, length, alpha)
        notes = red.notes
        k_in = INNER_CONFIGS[pair].k_in
        rng = np.random.default_rng([seed, 1])
        inputs = rng.normal(size=(length, k_in))
        per_seed.append({"seed": seed, "max_deviation": deviation(red, inputs)})
    worst = max(p["max_deviation"] for p in per_seed)
    report = {
        "pair": pair,
        "length": length,
        "alpha": alpha,
        "tolerance": tolerance,
        "seeds": per_seed,
        "max_deviation": worst,
        "verdict": "equivalent" if worst < tolerance else "different",
    }
    if notes:
        report["notes"] = notes
    return report
