"""Step dynamics for the four recurrent memory architectures.

All cells share a convention: column-vector states, float64 params held as
plain numpy arrays, and a `step(tape, p, state, x)` function that consumes
tensors recorded on an episode tape.  `p` is the dict of parameter leaf
tensors produced by `Cell.bind(tape)`, so one parameter set can drive many
episodes, each on a fresh tape.

Memory layouts:
  - lstm: one memory vector m (n_mem, 1), scalar write/forget/output gates.
  - stack: a (depth, word) matrix of stack slots, slot 0 on top; every step
    blends push/pop/no-op continuations of the whole stack, so depth grows by
    one row per step up to `max_depth`.
  - ram: a (rows, word) memory matrix addressed by a weight vector over rows,
    either a learned softmax over rows ("direct") or content similarity plus
    interpolation and a circular shift ("content").
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import numcore as nc
from .numcore import Tape, Tensor


class StackDepthError(RuntimeError):
    """Stack grew past its configured depth cap."""


ACTIVATIONS = {
    "tanh": nc.tanh,
    "sigmoid": nc.sigmoid,
    "relu": nc.relu,
    "identity": lambda t: t,
}


# ---------------------------------------------------------------------------
# configs


@dataclass
class RnnConfig:
    k_in: int
    k_hidden: int
    k_out: int
    hidden_activation: str = "tanh"


@dataclass
class LstmConfig:
    k_in: int
    k_hidden: int
    k_out: int
    n_mem: int
    hidden_activation: str = "tanh"
    candidate_activation: str = "tanh"
    candidate_uses_input: bool = False
    output_from_memory: bool = False


@dataclass
class StackConfig:
    k_in: int
    k_hidden: int
    k_out: int
    word: int
    hidden_activation: str = "tanh"
    candidate_activation: str = "tanh"
    read_gate_fixed: bool = False
    max_depth: int = 64


@dataclass
class RamConfig:
    k_in: int
    k_hidden: int
    k_out: int
    rows: int
    word: int
    addressing: str = "direct"  # "direct" | "content"
    hidden_activation: str = "tanh"
    candidate_activation: str = "tanh"
    coupled_gates: bool = False
    shift_range: int = 1
    sharpness: float = 5.0


CONFIG_TYPES = {
    "rnn": RnnConfig,
    "lstm": LstmConfig,
    "stack": StackConfig,
    "ram": RamConfig,
}


# ---------------------------------------------------------------------------
# parameter tables and initialization


def param_spec(config):
    """Ordered (name, shape) pairs for a cell config."""
    if isinstance(config, RnnConfig):
        ki, kh, ko = config.k_in, config.k_hidden, config.k_out
        return [
            ("w_xh", (kh, ki)),
            ("w_hh", (kh, kh)),
            ("b_h", (kh, 1)),
            ("w_ho", (ko, kh)),
            ("b_o", (ko, 1)),
        ]
    if isinstance(config, LstmConfig):
        ki, kh, ko, n = config.k_in, config.k_hidden, config.k_out, config.n_mem
        spec = [("w_hc", (n, kh)), ("b_c", (n, 1))]
        if config.candidate_uses_input:
            spec.append(("w_xc", (n, ki)))
        for g in ("gi", "gf", "go"):
            spec += [
                ("w_%s_h" % g, (1, kh)),
                ("w_%s_x" % g, (1, ki)),
                ("b_%s" % g, (1, 1)),
            ]
        spec += [
            ("w_xh", (kh, ki)),
            ("w_rh", (kh, n)),
            ("b_h", (kh, 1)),
        ]
        if config.output_from_memory:
            spec += [("w_mo", (ko, n)), ("b_o", (ko, 1))]
        else:
            spec += [("w_ho", (ko, kh)), ("b_o", (ko, 1))]
        return spec
    if isinstance(config, StackConfig):
        ki, kh, ko, w = config.k_in, config.k_hidden, config.k_out, config.word
        spec = [
            ("w_xh", (kh, ki)),
            ("w_rh", (kh, w)),
            ("b_h", (kh, 1)),
            ("w_hd", (3, kh)),
            ("b_op", (3, 1)),
            ("w_hc", (w, kh)),
            ("b_c", (w, 1)),
        ]
        if not config.read_gate_fixed:
            spec += [("w_go_h", (1, kh)), ("w_go_x", (1, ki)), ("b_go", (1, 1))]
        spec += [("w_ho", (ko, kh)), ("b_o", (ko, 1))]
        return spec
    if isinstance(config, RamConfig):
        ki, kh, ko = config.k_in, config.k_hidden, config.k_out
        m, w = config.rows, config.word
        spec = [
            ("w_xh", (kh, ki)),
            ("w_rh", (kh, w)),
            ("b_h", (kh, 1)),
            ("w_hc", (w, kh)),
            ("b_c", (w, 1)),
            ("w_gi_h", (m, kh)),
            ("w_gi_x", (m, ki)),
            ("b_gi", (m, 1)),
        ]
        if not config.coupled_gates:
            spec += [("w_gf_h", (m, kh)), ("w_gf_x", (m, ki)), ("b_gf", (m, 1))]
        if config.addressing == "direct":
            spec += [("w_ha", (m, kh)), ("b_a", (m, 1))]
        elif config.addressing == "content":
            s = 2 * config.shift_range + 1
            spec += [
                ("w_hk", (w, kh)),
                ("b_k", (w, 1)),
                ("w_hg", (1, kh)),
                ("b_gt", (1, 1)),
                ("w_hs", (s, kh)),
                ("b_s", (s, 1)),
            ]
        else:
            raise ValueError("unknown addressing mode %r" % (config.addressing,))
        spec += [("w_ho", (ko, kh)), ("b_o", (ko, 1))]
        return spec
    raise TypeError("not a cell config: %r" % (config,))


BIAS_INIT = 0.1


def init_params(config, seed, scheme="scaled"):
    """Draw a fresh parameter dict.

    scheme "scaled": weights ~ N(0,1)/sqrt(fan_in); scheme "raw": N(0,1).
    Biases start at 0.1 under both schemes.
    """
    if scheme not in ("scaled", "raw"):
        raise ValueError("unknown init scheme %r" % (scheme,))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
    params = {}
    for name, shape in param_spec(config):
        if name.startswith("b_"):
            params[name] = np.full(shape, BIAS_INIT)
        else:
            w = rng.normal(size=shape)
            if scheme == "scaled":
                w /= np.sqrt(shape[1])
            params[name] = w
    return params


# ---------------------------------------------------------------------------
# shared pieces


def _affine(p, w_name, x, b_name):
    return nc.affine(p[w_name], x, p[b_name])


def _gate(p, prefix, h, x):
    """Scalar or vector gate sigmoid(w_h @ h + w_x @ x + b)."""
    return nc.sigmoid(
        nc.affine2(p["w_%s_h" % prefix], h, p["w_%s_x" % prefix], x, p["b_%s" % prefix])
    )


def stack_update(tape, slots, d, candidate, max_depth):
    """Blend the three stack continuations; depth grows by one row.

    slots: (depth, word) tensor, top row first.  candidate: (word, 1).
    d: (3, 1) signal strengths ordered (push, pop, no-op).  Returns the new
    (depth+1, word) slots tensor

        d_push * [cand^T; slots] + d_pop * [slots[1:]; 0; 0] + d_noop * [slots; 0]
    """
    depth = slots.shape[0]
    if depth + 1 > max_depth:
        raise StackDepthError("stack depth %d exceeds cap %d" % (depth + 1, max_depth))
    return nc.stack_blend(slots, candidate, d)


def address_content_location(tape, mem, key, sharpness, gate, shift_kernel, a_prev):
    """Content-similarity read weights with interpolation and circular shift.

    Content weights are softmax(sharpness * cosine(row, key)); they blend with
    the previous step's weights via `gate` (gate=1 keeps the previous weights)
    and the blend is convolved circularly with `shift_kernel` (odd length,
    center = no shift).  Falls back to uniform content weights when the key or
    any memory row has zero norm (e.g. the all-zero initial memory); the
    fallback is a constant, carrying no gradient.
    """
    rows = mem.shape[0]
    row_norms = np.sqrt((mem.data * mem.data).sum(axis=1))
    key_norm = np.sqrt((key.data * key.data).sum())
    if key_norm == 0.0 or np.any(row_norms == 0.0):
        content = tape.leaf(np.full((rows, 1), 1.0 / rows))
    else:
        content = nc.softmax(nc.smul(sharpness, nc.cosine_rows(mem, key)))
    blended = nc.lerp(gate, a_prev, content)
    return nc.circular_conv(blended, shift_kernel)


# ---------------------------------------------------------------------------
# cells


class Cell:
    """Base: holds a config and a numpy parameter dict."""

    arch = None

    def __init__(self, config, params):
        self.config = config
        self.params = params
        expected = dict(param_spec(config))
        got = {k: v.shape for k, v in params.items()}
        want = {k: tuple(s) for k, s in expected.items()}
        if got != want:
            raise ValueError(
                "parameter set mismatch: got %s, want %s" % (sorted(got), sorted(want))
            )

    def bind(self, tape):
        """Enter all parameters as leaves on an episode tape."""
        return {k: tape.leaf(v) for k, v in self.params.items()}

    def output_dim(self):
        return self.config.k_out


class RnnCell(Cell):
    arch = "rnn"

    def init_state(self, tape):
        return (tape.zeros(self.config.k_hidden),)

    def step(self, tape, p, state, x, trace=None):
        (h,) = state
        act = ACTIVATIONS[self.config.hidden_activation]
        h2 = act(nc.affine2(p["w_xh"], x, p["w_hh"], h, p["b_h"]))
        out = _affine(p, "w_ho", h2, "b_o")
        if trace is not None:
            trace["hidden"] = h2.data
            trace["output"] = out.data
        return (h2,), out


class LstmCell(Cell):
    arch = "lstm"

    def init_state(self, tape):
        return (tape.zeros(self.config.k_hidden), tape.zeros(self.config.n_mem))

    def step(self, tape, p, state, x, trace=None):
        h, m = state
        cfg = self.config
        act = ACTIVATIONS[cfg.hidden_activation]
        act_c = ACTIVATIONS[cfg.candidate_activation]

        if cfg.candidate_uses_input:
            c = act_c(nc.affine2(p["w_hc"], h, p["w_xc"], x, p["b_c"]))
        else:
            c = act_c(nc.affine(p["w_hc"], h, p["b_c"]))
        g_i = _gate(p, "gi", h, x)
        g_f = _gate(p, "gf", h, x)
        g_o = _gate(p, "go", h, x)
        m2 = nc.add(nc.smul(g_i, c), nc.smul(g_f, m))
        r = nc.smul(g_o, m2)
        h2 = act(nc.affine2(p["w_xh"], x, p["w_rh"], r, p["b_h"]))
        if cfg.output_from_memory:
            out = _affine(p, "w_mo", m2, "b_o")
        else:
            out = _affine(p, "w_ho", h2, "b_o")
        if trace is not None:
            trace["hidden"] = h2.data
            trace["memory"] = m2.data
            trace["gate_in"] = g_i.data
            trace["gate_forget"] = g_f.data
            trace["gate_out"] = g_o.data
            trace["candidate"] = c.data
            trace["output"] = out.data
        return (h2, m2), out


class StackCell(Cell):
    arch = "stack"

    def init_state(self, tape):
        # one all-zero slot, nothing read yet
        return (
            tape.zeros(self.config.k_hidden),
            tape.zeros(self.config.word),
            tape.zeros(1, self.config.word),
        )

    def step(self, tape, p, state, x, trace=None):
        h, r, slots = state
        cfg = self.config
        act = ACTIVATIONS[cfg.hidden_activation]
        act_c = ACTIVATIONS[cfg.candidate_activation]

        h2 = act(nc.affine2(p["w_xh"], x, p["w_rh"], r, p["b_h"]))
        d = nc.sigmoid(nc.affine(p["w_hd"], h2, p["b_op"]))
        c = act_c(nc.affine(p["w_hc"], h2, p["b_c"]))
        slots2 = stack_update(tape, slots, d, c, cfg.max_depth)
        if cfg.read_gate_fixed:
            g_o = tape.scalar(1.0)
        else:
            g_o = _gate(p, "go", h, x)
        top = nc.transpose(nc.slice_rows(slots2, 0, 1))
        r2 = nc.smul(g_o, top)
        out = _affine(p, "w_ho", h2, "b_o")
        if trace is not None:
            trace["hidden"] = h2.data
            trace["signal_push"] = d.data[0:1]
            trace["signal_pop"] = d.data[1:2]
            trace["signal_noop"] = d.data[2:3]
            trace["gate_read"] = g_o.data
            trace["candidate"] = c.data
            trace["stack"] = slots2.data
            trace["read"] = r2.data
            trace["output"] = out.data
        return (h2, r2, slots2), out


class RamCell(Cell):
    arch = "ram"

    def init_state(self, tape):
        cfg = self.config
        return (
            tape.zeros(cfg.k_hidden),
            tape.zeros(cfg.rows, cfg.word),
            tape.leaf(np.full((cfg.rows, 1), 1.0 / cfg.rows)),
        )

    def _read_weights(self, tape, p, h, mem, a_prev, trace):
        cfg = self.config
        if cfg.addressing == "direct":
            return nc.softmax(nc.affine(p["w_ha"], h, p["b_a"]))
        key = nc.tanh(nc.affine(p["w_hk"], h, p["b_k"]))
        gate = nc.sigmoid(nc.affine(p["w_hg"], h, p["b_gt"]))
        shift = nc.softmax(nc.affine(p["w_hs"], h, p["b_s"]))
        if trace is not None:
            trace["key"] = key.data
            trace["gate_blend"] = gate.data
            trace["shift"] = shift.data
        return address_content_location(
            tape, mem, key, tape.scalar(cfg.sharpness), gate, shift, a_prev
        )

    def step(self, tape, p, state, x, trace=None):
        h, mem, a_prev = state
        cfg = self.config
        act = ACTIVATIONS[cfg.hidden_activation]
        act_c = ACTIVATIONS[cfg.candidate_activation]

        a = self._read_weights(tape, p, h, mem, a_prev, trace)
        r = nc.matmul(nc.transpose(mem), a)
        h2 = act(nc.affine2(p["w_xh"], x, p["w_rh"], r, p["b_h"]))
        g_i = _gate(p, "gi", h, x)
        if cfg.coupled_gates:
            g_f = nc.sub(tape.leaf(np.ones((cfg.rows, 1))), g_i)
        else:
            g_f = _gate(p, "gf", h, x)
        c = act_c(nc.affine(p["w_hc"], h, p["b_c"]))
        mem2 = nc.write_rows(mem, g_f, g_i, c)
        out = _affine(p, "w_ho", h2, "b_o")
        if trace is not None:
            trace["hidden"] = h2.data
            trace["read_weights"] = a.data
            trace["read"] = r.data
            trace["gate_write"] = g_i.data
            trace["gate_keep"] = g_f.data
            trace["candidate"] = c.data
            trace["memory"] = mem2.data
            trace["output"] = out.data
        return (h2, mem2, a), out


CELL_TYPES = {
    "rnn": RnnCell,
    "lstm": LstmCell,
    "stack": StackCell,
    "ram": RamCell,
}


def make_cell(arch, config, params):
    return CELL_TYPES[arch](config, params)


def new_cell(arch, config, seed, scheme="scaled"):
    """Build a cell with freshly initialized parameters."""
    return CELL_TYPES[arch](config, init_params(config, seed, scheme))


def config_to_dict(config):
    return asdict(config)


def config_from_dict(arch, d):
    return CONFIG_TYPES[arch](**d)
