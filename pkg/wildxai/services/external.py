"""External black-box predictors reached over a line protocol on child stdin/stdout.

Handshake: parent writes ``XAIP/1 predict_proba N L``, child answers ``OK`` or
``OK concurrent``. Each request is ``BATCH k`` followed by k lines of N*L
comma-separated reals (feature-major); the child answers k probability lines.
``END`` closes the session.
"""
import collections
import logging
import queue
import shlex
import subprocess
import threading
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from wildxai.exceptions import TransportError
from wildxai.models.predictor import PredictorKind
from wildxai.services.predictors import PredictorHandle

logger = logging.getLogger(__name__)

PROTOCOL = "XAIP/1"
STDERR_TAIL_LINES = 50


class _Child:
    """One child process speaking the protocol."""

    def __init__(self, argv: List[str], input_shape: Tuple[int, int]):
        self.argv = argv
        try:
            self.process = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as e:
            raise TransportError(f"cannot launch external predictor {shlex.join(argv)}: {e}") from e
        # unread stderr would fill the pipe and stall the child mid-batch
        self._stderr: "collections.deque[str]" = collections.deque(maxlen=STDERR_TAIL_LINES)
        self._drain = threading.Thread(target=self._drain_stderr, daemon=True)
        self._drain.start()
        n, l = input_shape
        self.send(f"{PROTOCOL} predict_proba {n} {l}")
        reply = self.receive()
        parts = reply.split()
        if not parts or parts[0] != "OK":
            self.kill()
            raise TransportError(f"external predictor refused handshake: {reply!r}")
        self.concurrent = "concurrent" in parts[1:]

    def send(self, line: str) -> None:
        try:
            self.process.stdin.write(line + "\n")
            self.process.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as e:
            raise TransportError(f"external predictor closed its input: {self._stderr_tail()}") from e

    def receive(self) -> str:
        line = self.process.stdout.readline()
        if not line:
            raise TransportError(f"external predictor exited unexpectedly: {self._stderr_tail()}")
        return line.strip()

    def request(self, rows: np.ndarray) -> np.ndarray:
        lines = [f"BATCH {len(rows)}"]
        lines.extend(",".join(repr(float(v)) for v in row) for row in rows)
        self.send("\n".join(lines))
        out = np.empty(len(rows))
        for i in range(len(rows)):
            reply = self.receive()
            try:
                out[i] = float(reply)
            except ValueError as e:
                raise TransportError(f"external predictor sent a non-numeric reply: {reply!r}") from e
        if not np.all(np.isfinite(out)) or out.min(initial=0.0) < 0.0 or out.max(initial=0.0) > 1.0:
            raise TransportError("external predictor returned probabilities outside [0, 1]")
        return out

    def _drain_stderr(self) -> None:
        for line in self.process.stderr:
            if line.strip():
                self._stderr.append(line.rstrip())

    def _stderr_tail(self) -> str:
        try:
            self.process.wait(timeout=1.0)
        except subprocess.TimeoutExpired:
            return f"pid {self.process.pid} still running"
        self._drain.join(timeout=1.0)
        return self._stderr[-1] if self._stderr else f"exit code {self.process.returncode}"

    def close(self) -> None:
        if self.process.poll() is None:
            try:
                self.send("END")
                self.process.stdin.close()
                self.process.wait(timeout=10)
            except (TransportError, subprocess.TimeoutExpired):
                self.kill()

    def kill(self) -> None:
        if self.process.poll() is None:
            self.process.kill()
            self.process.wait()


class ExternalPredictor(PredictorHandle):
    """
    Predictor served by an external process.

    Requests are serialized over one child unless the child advertises
    ``concurrent``, in which case up to ``pool_size`` children serve
    requests in parallel.
    """

    kind = PredictorKind.EXTERNAL

    def __init__(
        self,
        command: Union[str, Sequence[str]],
        input_shape: Tuple[int, int],
        feature_names: Optional[List[str]] = None,
        pool_size: int = 1,
    ):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        super().__init__(
            id=f"external:{shlex.join(argv)}",
            input_shape=input_shape,
            feature_names=feature_names or [f"f{i}" for i in range(input_shape[0])],
            metadata={"command": shlex.join(argv)},
        )
        self.argv = argv
        first = _Child(argv, self.input_shape)
        self._lock = threading.Lock()
        self._idle: "queue.Queue[_Child]" = queue.Queue()
        self._children = [first]
        if first.concurrent:
            try:
                for _ in range(max(1, pool_size) - 1):
                    self._children.append(_Child(argv, self.input_shape))
            except TransportError:
                for child in self._children:
                    child.close()
                raise
        for child in self._children:
            self._idle.put(child)
        logger.info(
            f"Connected to external predictor {self.metadata['command']} "
            f"({len(self._children)} process{'es' if len(self._children) > 1 else ''}, "
            f"concurrent={first.concurrent})"
        )

    @property
    def supports_concurrency(self) -> bool:
        return self._children[0].concurrent

    def predict_flat(self, X: np.ndarray) -> np.ndarray:
        if not self.supports_concurrency:
            with self._lock:
                return self._children[0].request(X)
        child = self._idle.get()
        try:
            return child.request(X)
        finally:
            self._idle.put(child)

    def to_artifact(self):
        raise TransportError("external predictors cannot be serialized")

    def close(self) -> None:
        for child in self._children:
            child.close()
        logger.debug(f"Closed external predictor {self.metadata['command']}")
