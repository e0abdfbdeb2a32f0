"""Isolated execution of untrusted candidate source.

The real isolation path spawns a child process speaking a newline-delimited
JSON protocol (one request frame in, one response frame out) and enforces a
wall timeout by killing the process tree. An in-process executor with the same
interface exists for trusted code paths (tests, deterministic runs) so the
engine suite never depends on an external runner.
"""

from __future__ import annotations

import ast
import json
import os
import signal
import subprocess
import sys
import threading
import time
import traceback
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

PARSE_MODE = "parse"
RUN_MODE = "run"
DEFAULT_ENTRY = "entrypoint"


@dataclass(frozen=True)
class ResourceLimits:
    wall_timeout: float = 10.0
    memory_cap: int = 512 * 1024 * 1024
    output_cap: int = 1024 * 1024

    def __post_init__(self) -> None:
        if self.wall_timeout <= 0 or self.memory_cap <= 0 or self.output_cap <= 0:
            raise ValueError("all resource limits must be positive")


@dataclass
class ExecutionResult:
    """Outcome of one candidate execution; exactly one kind per run."""

    kind: str  # "value" | "candidate_error" | "timeout" | "protocol_error"
    value: Any = None
    error_type: str = ""
    error_message: str = ""
    error_traceback: str = ""
    detail: str = ""
    stdout: str = ""
    stderr: str = ""
    wall_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.kind == "value"

    def trace_text(self) -> str:
        """Human-readable failure description, used as LLM error context."""
        if self.kind == "candidate_error":
            return self.error_traceback or f"{self.error_type}: {self.error_message}"
        if self.kind == "timeout":
            return "execution timed out"
        if self.kind == "protocol_error":
            return f"execution protocol error: {self.detail}"
        return ""


def encode_request(
    source: str, mode: str, context: Any = None, entry: str = DEFAULT_ENTRY
) -> bytes:
    if mode not in (PARSE_MODE, RUN_MODE):
        raise ValueError(f"unknown mode {mode!r}")
    frame = {"op": mode, "source": source, "context": context, "entry": entry}
    return json.dumps(frame).encode() + b"\n"


def decode_response(data: bytes) -> ExecutionResult:
    """Total decoder: any malformed frame becomes a protocol error, never a raise."""
    try:
        obj = json.loads(data.decode("utf-8", errors="replace"))
    except (ValueError, UnicodeDecodeError) as exc:
        return ExecutionResult(kind="protocol_error", detail=f"unparseable frame: {exc}")
    if not isinstance(obj, dict):
        return ExecutionResult(kind="protocol_error", detail="frame is not an object")
    if "value" in obj and "error" in obj:
        return ExecutionResult(kind="protocol_error", detail="ambiguous frame: value and error")
    if obj.get("ok") is True and "value" in obj:
        return ExecutionResult(kind="value", value=obj["value"])
    if obj.get("ok") is False and isinstance(obj.get("error"), dict):
        err = obj["error"]
        return ExecutionResult(
            kind="candidate_error",
            error_type=str(err.get("type", "")),
            error_message=str(err.get("message", "")),
            error_traceback=str(err.get("traceback", "")),
        )
    return ExecutionResult(kind="protocol_error", detail=f"malformed frame keys: {sorted(obj)}")


def to_jsonable(value: Any):
    """Normalize a candidate return value to plain JSON types (arrays to lists)."""
    import numpy as np

    if value is None or isinstance(value, (bool, int, str)):
        return value
    if isinstance(value, float):
        return value
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    raise TypeError(f"value of type {type(value).__name__} is not serializable")


def check_entry_defined(source: str, entry: str = DEFAULT_ENTRY) -> Optional[str]:
    """Return a diagnostic if `entry` is not defined at module top level, else None.

    Static check only; parse mode must never execute candidate code.
    """
    tree = ast.parse(source)
    for node in tree.body:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)) and node.name == entry:
            return None
        if isinstance(node, ast.Assign):
            for target in node.targets:
                if isinstance(target, ast.Name) and target.id == entry:
                    return None
        if isinstance(node, (ast.Import, ast.ImportFrom)):
            for alias in node.names:
                if (alias.asname or alias.name) == entry:
                    return None
    return f"missing {entry}: source does not define a top-level {entry!r}"


class Executor:
    """Interface shared by the subprocess and in-process executors."""

    def execute(
        self,
        source: str,
        mode: str,
        context: Any = None,
        limits: ResourceLimits = ResourceLimits(),
    ) -> ExecutionResult:
        raise NotImplementedError


class SubprocessExecutor(Executor):
    """One child process per execution, killed as a whole tree on timeout."""

    def __init__(self, interpreter_cmd: List[str]) -> None:
        if not interpreter_cmd:
            raise ValueError("interpreter_cmd must be a non-empty command line")
        self.interpreter_cmd = list(interpreter_cmd)

    def execute(
        self,
        source: str,
        mode: str,
        context: Any = None,
        limits: ResourceLimits = ResourceLimits(),
    ) -> ExecutionResult:
        start = time.monotonic()
        try:
            proc = subprocess.Popen(
                self.interpreter_cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                start_new_session=True,
                env={**os.environ, "CANDIDATE_MEMORY_CAP": str(limits.memory_cap)},
            )
        except OSError as exc:
            return ExecutionResult(kind="protocol_error", detail=f"spawn failed: {exc}")

        timed_out = False
        try:
            stdout, stderr = proc.communicate(
                input=encode_request(source, mode, context), timeout=limits.wall_timeout
            )
        except subprocess.TimeoutExpired:
            timed_out = True
            _kill_process_tree(proc)
            stdout, stderr = proc.communicate()
        wall = time.monotonic() - start

        out_text = stdout[: limits.output_cap].decode("utf-8", errors="replace")
        err_text = stderr[: limits.output_cap].decode("utf-8", errors="replace")
        if timed_out:
            return ExecutionResult(
                kind="timeout", stdout=out_text, stderr=err_text, wall_time=wall
            )

        lines = [ln for ln in stdout.splitlines() if ln.strip()]
        if not lines:
            result = ExecutionResult(kind="protocol_error", detail="no response frame on stdout")
        else:
            result = decode_response(lines[-1])
            result.stdout = "\n".join(
                ln.decode("utf-8", errors="replace") for ln in lines[:-1]
            )[: limits.output_cap]
        result.stderr = err_text
        result.wall_time = wall
        return result


def _kill_process_tree(proc: subprocess.Popen) -> None:
    try:
        os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
    except (ProcessLookupError, PermissionError, OSError):
        try:
            proc.kill()
        except OSError:
            pass


class InProcessExecutor(Executor):
    """Runs candidate source in this interpreter; for trusted code and tests only.

    No memory cap and no stdout capture; the wall timeout is best-effort (the
    worker thread is abandoned, not killed).
    """

    def __init__(self, helper_module=None) -> None:
        self._helper_module = helper_module
        self._lock = threading.Lock()

    def execute(
        self,
        source: str,
        mode: str,
        context: Any = None,
        limits: ResourceLimits = ResourceLimits(),
    ) -> ExecutionResult:
        start = time.monotonic()
        if mode == PARSE_MODE:
            result = self._parse_only(source)
            result.wall_time = time.monotonic() - start
            return result
        if mode != RUN_MODE:
            return ExecutionResult(kind="protocol_error", detail=f"unknown mode {mode!r}")

        box: Dict[str, ExecutionResult] = {}

        def worker() -> None:
            box["result"] = self._run(source, context)

        thread = threading.Thread(target=worker, daemon=True)
        thread.start()
        thread.join(limits.wall_timeout)
        wall = time.monotonic() - start
        if thread.is_alive():
            return ExecutionResult(kind="timeout", wall_time=wall)
        result = box.get(
            "result", ExecutionResult(kind="protocol_error", detail="worker produced no result")
        )
        result.wall_time = wall
        return result

    def _parse_only(self, source: str) -> ExecutionResult:
        try:
            compile(source, "<candidate>", "exec")
            diagnostic = check_entry_defined(source)
        except SyntaxError as exc:
            return ExecutionResult(
                kind="candidate_error",
                error_type="SyntaxError",
                error_message=str(exc),
                error_traceback=traceback.format_exc(limit=0),
            )
        if diagnostic:
            return ExecutionResult(
                kind="candidate_error", error_type="EntryPointError", error_message=diagnostic
            )
        return ExecutionResult(kind="value", value="ok")

    def _run(self, source: str, context: Any) -> ExecutionResult:
        if self._helper_module is not None:
            with self._lock:
                sys.modules["helper"] = self._helper_module
        namespace: Dict[str, Any] = {"__name__": "__candidate__"}
        try:
            exec(compile(source, "<candidate>", "exec"), namespace)
            entry = namespace.get(DEFAULT_ENTRY)
            if not callable(entry):
                return ExecutionResult(
                    kind="candidate_error",
                    error_type="EntryPointError",
                    error_message=f"{DEFAULT_ENTRY!r} is not defined or not callable",
                )
            value = entry(context) if _wants_argument(entry) else entry()
            return ExecutionResult(kind="value", value=to_jsonable(value))
        except BaseException as exc:  # candidate code may raise anything
            return ExecutionResult(
                kind="candidate_error",
                error_type=type(exc).__name__,
                error_message=str(exc),
                error_traceback=traceback.format_exc(),
            )


def _wants_argument(fn) -> bool:
    import inspect

    try:
        sig = inspect.signature(fn)
    except (TypeError, ValueError):
        return False
    for param in sig.parameters.values():
        if param.kind in (param.POSITIONAL_ONLY, param.POSITIONAL_OR_KEYWORD, param.VAR_POSITIONAL):
            return True
    return False
