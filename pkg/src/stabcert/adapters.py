"""Model adapters: the black-box boundary of the library.

Every estimator talks to a :class:`ModelAdapter`, which maps a (masked)
input vector to a score vector and declares its output arity, whether the
scores are probabilities, and whether concurrent evaluation is safe.
Built-in families cover quick experiments; ``ExternalProcessAdapter``
drives an arbitrary child process over a line-delimited JSON protocol.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelAdapter",
    "FunctionAdapter",
    "ConjunctionModel",
    "MajorityModel",
    "LookupTableModel",
    "ExternalProcessAdapter",
    "ProtocolError",
    "adapter_from_descriptor",
]


class ProtocolError(RuntimeError):
    """The external-model wire protocol was violated."""


class ModelAdapter:
    """Base class for black-box models under study.

    Subclasses set ``n`` (input width), ``m`` (output arity),
    ``probabilities`` (outputs sum to one) and ``concurrency_safe``, and
    implement :meth:`_evaluate`.  Calls are counted in ``calls`` so runs
    can account for their evaluation budget.
    """

    n: int
    m: int
    probabilities: bool = False
    concurrency_safe: bool = True

    def __init__(self) -> None:
        self.calls = 0

    def _evaluate(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"input shape {x.shape} does not match model width {self.n}")
        self.calls += 1
        out = np.asarray(self._evaluate(x), dtype=float)
        if out.shape != (self.m,):
            raise ValueError(f"model returned shape {out.shape}, declared m={self.m}")
        return out

    def evaluate_batch(self, xs) -> np.ndarray:
        return np.stack([self.evaluate(x) for x in xs])


def _support(x: np.ndarray) -> np.ndarray:
    return x != 0.0


class FunctionAdapter(ModelAdapter):
    """Wrap a plain callable ``fn(x) -> scores`` as an adapter."""

    def __init__(self, n: int, m: int, fn, probabilities: bool = False,
                 concurrency_safe: bool = True):
        super().__init__()
        self.n = n
        self.m = m
        self.fn = fn
        self.probabilities = probabilities
        self.concurrency_safe = concurrency_safe

    def _evaluate(self, x: np.ndarray) -> np.ndarray:
        return self.fn(x)


class ConjunctionModel(ModelAdapter):
    """Two-class model that fires iff all member features are present.

    A feature counts as present when the (masked) input is nonzero there,
    so the model is a conjunction over the mask pattern whenever the raw
    input has no zero entries.
    """

    probabilities = True

    def __init__(self, n: int, members):
        super().__init__()
        self.n = n
        self.m = 2
        self.members = tuple(sorted(members))
        if any(not 0 <= i < n for i in self.members):
            raise ValueError(f"member indices {self.members} out of range for n={n}")

    def _evaluate(self, x: np.ndarray) -> np.ndarray:
        on = bool(np.all(_support(x)[list(self.members)])) if self.members else True
        p = 1.0 if on else 0.0
        return np.array([p, 1.0 - p])


class MajorityModel(ModelAdapter):
    """Two-class model scoring the fraction of present features."""

    probabilities = True

    def __init__(self, n: int, threshold: float = 0.5):
        super().__init__()
        self.n = n
        self.m = 2
        self.threshold = threshold

    def _evaluate(self, x: np.ndarray) -> np.ndarray:
        frac = float(np.mean(_support(x)))
        return np.array([frac, 1.0 - frac])


class LookupTableModel(ModelAdapter):
    """Random lookup table keyed by the input's support pattern.

    Scores for each of the ``2**n`` support patterns are drawn once from
    a seeded generator, either raw uniform [0, 1] values or normalized to
    probability vectors.  Only sensible for small ``n``.
    """

    def __init__(self, n: int, m: int = 2, seed: int = 0, probabilities: bool = False):
        super().__init__()
        if n > 20:
            raise ValueError(f"lookup table model capped at n=20, got {n}")
        self.n = n
        self.m = m
        self.seed = seed
        self.probabilities = probabilities
        rng = np.random.default_rng(seed)
        table = rng.random((1 << n, m))
        if probabilities:
            table = table / table.sum(axis=1, keepdims=True)
        self.table = table

    def _evaluate(self, x: np.ndarray) -> np.ndarray:
        sup = _support(x)
        idx = 0
        for i in range(self.n):
            if sup[i]:
                idx |= 1 << i
        return self.table[idx]


class ExternalProcessAdapter(ModelAdapter):
    """Drive a child-process model over line-delimited JSON.

    On startup the child prints a handshake line
    ``{"n": int, "m": int, "probabilities": bool}``.  Each request is one
    line ``{"id": int, "masked_input": [float, ...]}`` on its stdin and
    each response one line ``{"id": int, "scores": [float, ...]}`` on its
    stdout.  Responses may arrive out of order; the ``id`` field is the
    correlator.  Protocol violations raise :class:`ProtocolError`.
    """

    concurrency_safe = False

    def __init__(self, command: str | list[str]):
        super().__init__()
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.command = argv
        try:
            self.proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as e:
            raise ProtocolError(f"could not start external model {argv!r}: {e}") from e
        self._lock = threading.Lock()
        self._pending: dict[int, list[float]] = {}
        self._next_id = 0
        handshake = self._read_line()
        try:
            self.n = int(handshake["n"])
            self.m = int(handshake["m"])
            self.probabilities = bool(handshake["probabilities"])
        except (KeyError, TypeError, ValueError) as e:
            raise ProtocolError(f"bad handshake line: {handshake!r}") from e
        if self.n <= 0 or self.m <= 0:
            raise ProtocolError(f"handshake declared nonpositive sizes: n={self.n}, m={self.m}")

    def _read_line(self) -> dict:
        line = self.proc.stdout.readline()
        if not line:
            code = self.proc.poll()
            raise ProtocolError(f"external model closed its stdout (exit code {code})")
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as e:
            raise ProtocolError(f"external model sent invalid JSON: {line!r}") from e
        if not isinstance(msg, dict):
            raise ProtocolError(f"external model sent a non-object line: {line!r}")
        return msg

    def _evaluate(self, x: np.ndarray) -> np.ndarray:
        with self._lock:
            req_id = self._next_id
            self._next_id += 1
            request = {"id": req_id, "masked_input": [float(v) for v in x]}
            try:
                self.proc.stdin.write(json.dumps(request) + "\n")
                self.proc.stdin.flush()
            except (BrokenPipeError, OSError) as e:
                raise ProtocolError(f"external model pipe closed: {e}") from e
            while req_id not in self._pending:
                msg = self._read_line()
                try:
                    rid = int(msg["id"])
                    scores = [float(v) for v in msg["scores"]]
                except (KeyError, TypeError, ValueError) as e:
                    raise ProtocolError(f"bad response line: {msg!r}") from e
                self._pending[rid] = scores
            scores = self._pending.pop(req_id)
        if len(scores) != self.m:
            raise ProtocolError(f"response carried {len(scores)} scores, handshake declared m={self.m}")
        return np.array(scores)

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()

    def __enter__(self) -> "ExternalProcessAdapter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def adapter_from_descriptor(descriptor: str, n: int = 12, seed: int = 0) -> ModelAdapter:
    """Build an adapter from a CLI-style descriptor string.

    Built-ins take optional ``key=value`` parameters after a colon, e.g.
    ``and:n=10,members=0-2`` or ``table:n=8,m=3``.  ``external:<command>``
    hands the remainder to :class:`ExternalProcessAdapter` verbatim.
    """
    if descriptor.startswith("external:"):
        return ExternalProcessAdapter(descriptor[len("external:"):])
    name, _, paramstr = descriptor.partition(":")
    params: dict[str, str] = {}
    if paramstr:
        for part in paramstr.split(","):
            key, _, val = part.partition("=")
            if not val:
                raise ValueError(f"malformed model parameter {part!r} in {descriptor!r}")
            params[key.strip()] = val.strip()
    n = int(params.get("n", n))
    seed = int(params.get("seed", seed))
    if name == "and":
        if "members" in params:
            lo, _, hi = params["members"].partition("-")
            members = range(int(lo), int(hi) + 1) if hi else [int(lo)]
        else:
            members = range(min(3, n))
        return ConjunctionModel(n, members)
    if name == "majority":
        return MajorityModel(n, threshold=float(params.get("threshold", 0.5)))
    if name == "table":
        return LookupTableModel(
            n,
            m=int(params.get("m", 2)),
            seed=seed,
            probabilities=params.get("probabilities", "true").lower() != "false",
        )
    raise ValueError(f"unknown model descriptor {descriptor!r}")
