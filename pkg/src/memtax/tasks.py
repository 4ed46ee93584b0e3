"""Synthetic sequence tasks: episode generators, losses, and eval metrics.

Episodes are fixed-length records: an input matrix (T, k_in), a target matrix
(T, k_out), a boolean step mask selecting where the loss applies, and a
textual form using the workbench notation: letters a-e for symbols, `D` for
the recall/separator marker, `E` for the start/stop marker, `-` for don't-care
steps whose input is the zero vector.

Task summary:
  count        "aaabcaa" -> first target component counts the a's seen so far
               at every step; components 2 and 3 flag b and c inputs.
  count-interf like count, but on b/c steps the target is exactly the b/c
               one-hot (the running count must survive invisibly).
  reverse      symbols, then D, then as many don't-care steps; targets spell
               the input reversed during the trailing steps.
  repeat-copy  E, a body, then D scaled by the repeat count n on its channel;
               targets spell the body n times followed by E.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc


@dataclass
class Episode:
    inputs: np.ndarray  # (T, k_in)
    targets: np.ndarray  # (T, k_out)
    mask: np.ndarray  # (T,) bool
    text: str

    def __len__(self):
        return self.inputs.shape[0]


@dataclass(frozen=True)
class Task:
    name: str
    k_in: int
    k_out: int
    loss: str  # "mse" | "ce"
    metric: str  # "mse" | "accuracy"
    symbols: str  # characters accepted in trace inputs (besides '-')


MAX_LEN = 20
REPEAT_MAX_BODY = 5
REPEAT_MAX_COUNT = 4

COUNT_ALPHABET = "abc"
REVERSE_ALPHABET = "abcde"

TASKS = {
    "count": Task("count", 3, 3, "mse", "mse", COUNT_ALPHABET),
    "count-interf": Task("count-interf", 3, 3, "mse", "mse", COUNT_ALPHABET),
    "reverse": Task("reverse", 6, 6, "ce", "accuracy", REVERSE_ALPHABET + "D"),
    "repeat-copy": Task("repeat-copy", 7, 7, "ce", "accuracy", "E" + REVERSE_ALPHABET + "D"),
}

# channel layout for reverse: a..e = 0..4, D = 5
REVERSE_D = 5
# channel layout for repeat-copy: E = 0, a..e = 1..5, D = 6
REPEAT_E = 0
REPEAT_D = 6


def gen_count(rng, max_len=MAX_LEN):
    length = int(rng.integers(1, max_len + 1))
    idx = rng.integers(0, 3, size=length)
    inputs = np.zeros((length, 3))
    targets = np.zeros((length, 3))
    count = 0
    for t, s in enumerate(idx):
        inputs[t, s] = 1.0
        if s == 0:
            count += 1
        else:
            targets[t, s] = 1.0
        targets[t, 0] = count
    text = "".join(COUNT_ALPHABET[s] for s in idx)
    return Episode(inputs, targets, np.ones(length, dtype=bool), text)


def gen_count_interf(rng, max_len=MAX_LEN):
    length = int(rng.integers(1, max_len + 1))
    idx = rng.integers(0, 3, size=length)
    inputs = np.zeros((length, 3))
    targets = np.zeros((length, 3))
    count = 0
    for t, s in enumerate(idx):
        inputs[t, s] = 1.0
        if s == 0:
            count += 1
            targets[t, 0] = count
        else:
            targets[t, s] = 1.0
    text = "".join(COUNT_ALPHABET[s] for s in idx)
    return Episode(inputs, targets, np.ones(length, dtype=bool), text)


def gen_reverse(rng, max_len=MAX_LEN):
    length = int(rng.integers(1, max_len + 1))
    idx = rng.integers(0, 5, size=length)
    total = 2 * length + 1
    inputs = np.zeros((total, 6))
    targets = np.zeros((total, 6))
    mask = np.zeros(total, dtype=bool)
    for t, s in enumerate(idx):
        inputs[t, s] = 1.0
    inputs[length, REVERSE_D] = 1.0
    for k, s in enumerate(idx[::-1]):
        targets[length + 1 + k, s] = 1.0
        mask[length + 1 + k] = True
    text = "".join(REVERSE_ALPHABET[s] for s in idx) + "D" + "-" * length
    return Episode(inputs, targets, mask, text)


def gen_repeat_copy(rng, max_body=REPEAT_MAX_BODY, max_repeats=REPEAT_MAX_COUNT):
    body = int(rng.integers(1, max_body + 1))
    repeats = int(rng.integers(1, max_repeats + 1))
    idx = rng.integers(0, 5, size=body)
    tail = body * repeats + 1
    total = 1 + body + 1 + tail
    inputs = np.zeros((total, 7))
    targets = np.zeros((total, 7))
    mask = np.zeros(total, dtype=bool)
    inputs[0, REPEAT_E] = 1.0
    for t, s in enumerate(idx):
        inputs[1 + t, 1 + s] = 1.0
    inputs[1 + body, REPEAT_D] = float(repeats)  # magnitude carries the count
    start = 2 + body
    for rep in range(repeats):
        for k, s in enumerate(idx):
            targets[start + rep * body + k, 1 + s] = 1.0
    targets[start + repeats * body, REPEAT_E] = 1.0
    mask[start:] = True
    text = (
        "E"
        + "".join(REVERSE_ALPHABET[s] for s in idx)
        + "D%d" % repeats
        + "-" * tail
    )
    return Episode(inputs, targets, mask, text)


GENERATORS = {
    "count": gen_count,
    "count-interf": gen_count_interf,
    "reverse": gen_reverse,
    "repeat-copy": gen_repeat_copy,
}


def generate(task_name, seed, index):
    """Deterministic episode `index` of the stream identified by `seed`."""
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(1, index))
    )
    return GENERATORS[task_name](rng)


class UnknownSymbolError(ValueError):
    pass


def text_to_steps(task_name, text):
    """Parse workbench notation into (token, input vector) pairs.

    `-` is a zero-vector step; for repeat-copy a digit right after `D` sets
    the marker magnitude (default 1) and belongs to the same step token.
    Raises UnknownSymbolError on anything else.
    """
    task = TASKS[task_name]
    steps = []
    i = 0
    while i < len(text):
        ch = text[i]
        token = ch
        vec = np.zeros(task.k_in)
        if ch == "-":
            pass
        elif task_name in ("count", "count-interf"):
            if ch not in COUNT_ALPHABET:
                raise UnknownSymbolError("symbol %r not valid for %s" % (ch, task_name))
            vec[COUNT_ALPHABET.index(ch)] = 1.0
        elif task_name == "reverse":
            if ch == "D":
                vec[REVERSE_D] = 1.0
            elif ch in REVERSE_ALPHABET:
                vec[REVERSE_ALPHABET.index(ch)] = 1.0
            else:
                raise UnknownSymbolError("symbol %r not valid for reverse" % (ch,))
        elif task_name == "repeat-copy":
            if ch == "E":
                vec[REPEAT_E] = 1.0
            elif ch == "D":
                mag = 1.0
                if i + 1 < len(text) and text[i + 1].isdigit():
                    mag = float(text[i + 1])
                    token = text[i : i + 2]
                    i += 1
                vec[REPEAT_D] = mag
            elif ch in REVERSE_ALPHABET:
                vec[1 + REVERSE_ALPHABET.index(ch)] = 1.0
            else:
                raise UnknownSymbolError("symbol %r not valid for repeat-copy" % (ch,))
        steps.append((token, vec))
        i += 1
    return steps


def text_to_inputs(task_name, text):
    """Input matrix for workbench notation; see text_to_steps."""
    steps = text_to_steps(task_name, text)
    if not steps:
        return np.zeros((0, TASKS[task_name].k_in))
    return np.vstack([vec for _, vec in steps])


# ---------------------------------------------------------------------------
# losses and metrics


def episode_loss(tape, outputs, episode, loss_kind):
    """Mean per-masked-step loss as a tape scalar.

    outputs: list of (k_out, 1) tensors, one per step.  For "mse" each term is
    the squared error summed over components; for "ce" each term is
    cross-entropy after softmax.
    """
    terms = []
    for t in range(len(episode)):
        if not episode.mask[t]:
            continue
        target = tape.leaf(episode.targets[t].reshape(-1, 1))
        if loss_kind == "mse":
            terms.append(nc.squared_error(outputs[t], target))
        elif loss_kind == "ce":
            terms.append(nc.cross_entropy(nc.softmax(outputs[t]), target))
        else:
            raise ValueError("unknown loss kind %r" % (loss_kind,))
    if not terms:
        raise ValueError("episode has no masked steps")
    total = terms[0]
    for term in terms[1:]:
        total = nc.add(total, term)
    return nc.smul(tape.scalar(1.0 / len(terms)), total)


def episode_metric_sums(outputs_data, episode, metric_kind):
    """(metric total, masked-step count) so callers can pool across episodes.

    The total is summed squared error for "mse" and the number of argmax hits
    for "accuracy", each over the episode's masked steps only.
    """
    masked = [t for t in range(len(episode)) if episode.mask[t]]
    if metric_kind == "mse":
        total = sum(
            float(((outputs_data[t][:, 0] - episode.targets[t]) ** 2).sum())
            for t in masked
        )
    elif metric_kind == "accuracy":
        total = sum(
            int(np.argmax(outputs_data[t][:, 0]) == np.argmax(episode.targets[t]))
            for t in masked
        )
    else:
        raise ValueError("unknown metric kind %r" % (metric_kind,))
    return float(total), len(masked)


def episode_metric(outputs_data, episode, metric_kind):
    """Success metric from plain output arrays: masked MSE or argmax accuracy."""
    total, count = episode_metric_sums(outputs_data, episode, metric_kind)
    if count == 0:
        raise ValueError("episode has no masked steps")
    return total / count
