"""Program archive with optimistic concurrency, lineage queries, and a completion feed.

Two backends share one contract: an in-memory store (tests, single-process runs)
and a client for a Redis-style key-value server. Writers serialize per program
via compare-and-swap on the record version; the completion feed is a cursor
that each consumer advances independently.
"""

from __future__ import annotations

import json
import socket
import threading
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

from .core import LifecycleState, Program

START_CURSOR = 0


class StoreError(Exception):
    pass


class NotFoundError(StoreError):
    pass


class VersionConflictError(StoreError):
    """CAS failure: stored version differs from the writer's expectation."""


class BackendUnavailableError(StoreError):
    pass


@dataclass(frozen=True)
class WriteReceipt:
    id: str
    new_version: int


class ProgramStore:
    """Backend contract. All methods are thread-safe."""

    def put_program(self, program: Program, expected_version: Optional[int]) -> WriteReceipt:
        raise NotImplementedError

    def get_program(self, program_id: str) -> Optional[Program]:
        raise NotImplementedError

    def parents(self, program_id: str) -> List[Program]:
        raise NotImplementedError

    def descendants(self, program_id: str) -> List[Program]:
        raise NotImplementedError

    def poll_completed(self, cursor: int) -> Tuple[List[Program], int]:
        raise NotImplementedError

    def all_ids(self) -> List[str]:
        raise NotImplementedError

    def put_blob(self, name: str, text: str) -> None:
        raise NotImplementedError

    def get_blob(self, name: str) -> Optional[str]:
        raise NotImplementedError

    # -- shared helpers -------------------------------------------------

    def all_programs(self) -> List[Program]:
        out = []
        for pid in self.all_ids():
            prog = self.get_program(pid)
            if prog is not None:
                out.append(prog)
        return out

    def require(self, program_id: str) -> Program:
        prog = self.get_program(program_id)
        if prog is None:
            raise NotFoundError(program_id)
        return prog


def cas_update(
    store: ProgramStore,
    program_id: str,
    mutate: Callable[[Program], Optional[Program]],
    max_retries: int = 32,
) -> Program:
    """Read-modify-write with bounded CAS retries.

    `mutate` returns the updated program, or None to signal no write is needed
    (the freshly read program is returned unchanged).
    """
    for _ in range(max_retries):
        current = store.require(program_id)
        updated = mutate(current)
        if updated is None:
            return current
        try:
            receipt = store.put_program(updated, expected_version=current.version)
            updated.version = receipt.new_version
            return updated
        except VersionConflictError:
            continue
    raise VersionConflictError(f"gave up after {max_retries} CAS retries on {program_id}")


class InMemoryStore(ProgramStore):
    """Dictionary-backed store; the reference implementation of the contract."""

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._programs: Dict[str, dict] = {}
        self._children: Dict[str, List[str]] = {}
        self._insertion_order: List[str] = []
        self._completed: List[Tuple[int, str]] = []  # (seq, id), seq strictly increasing
        self._completed_seq = START_CURSOR
        self._blobs: Dict[str, str] = {}

    def put_program(self, program: Program, expected_version: Optional[int]) -> WriteReceipt:
        with self._lock:
            stored = self._programs.get(program.id)
            if expected_version is None:
                if stored is not None:
                    raise VersionConflictError(
                        f"{program.id} already exists (version {stored['version']})"
                    )
                base = 0
            else:
                if stored is None:
                    raise VersionConflictError(f"{program.id} does not exist")
                if stored["version"] != expected_version:
                    raise VersionConflictError(
                        f"{program.id}: expected version {expected_version}, "
                        f"stored {stored['version']}"
                    )
                base = expected_version
            new_version = base + 1
            record = program.to_dict()
            record["version"] = new_version
            prev_state = stored["state"] if stored else None

            self._programs[program.id] = record
            if stored is None:
                self._insertion_order.append(program.id)
                for parent_id in program.parent_ids:
                    self._children.setdefault(parent_id, []).append(program.id)
            if record["state"] == LifecycleState.COMPLETE.value and prev_state != record["state"]:
                self._completed_seq += 1
                self._completed.append((self._completed_seq, program.id))
            return WriteReceipt(id=program.id, new_version=new_version)

    def get_program(self, program_id: str) -> Optional[Program]:
        with self._lock:
            record = self._programs.get(program_id)
            return Program.from_dict(record) if record is not None else None

    def parents(self, program_id: str) -> List[Program]:
        prog = self.require(program_id)
        return [self.require(pid) for pid in prog.parent_ids]

    def descendants(self, program_id: str) -> List[Program]:
        with self._lock:
            self.require(program_id)
            child_ids = list(self._children.get(program_id, []))
        return [self.require(cid) for cid in child_ids]

    def poll_completed(self, cursor: int) -> Tuple[List[Program], int]:
        with self._lock:
            fresh = [(seq, pid) for seq, pid in self._completed if seq > cursor]
            if not fresh:
                return [], cursor
            new_cursor = fresh[-1][0]
            ids = [pid for _, pid in fresh]
        return [self.require(pid) for pid in ids], new_cursor

    def all_ids(self) -> List[str]:
        with self._lock:
            return list(self._insertion_order)

    def put_blob(self, name: str, text: str) -> None:
        with self._lock:
            self._blobs[name] = text

    def get_blob(self, name: str) -> Optional[str]:
        with self._lock:
            return self._blobs.get(name)


# ---------------------------------------------------------------------------
# External key-value backend (Redis-style wire protocol)
# ---------------------------------------------------------------------------


class _RespConnection:
    """Minimal RESP2 client over a blocking socket; one request at a time."""

    def __init__(self, host: str, port: int, timeout: float = 5.0) -> None:
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise BackendUnavailableError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._buf = b""

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass

    def command(self, *parts: str):
        payload = [f"*{len(parts)}\r\n".encode()]
        for part in parts:
            data = part.encode() if isinstance(part, str) else part
            payload.append(f"${len(data)}\r\n".encode() + data + b"\r\n")
        try:
            self._sock.sendall(b"".join(payload))
            return self._read_reply()
        except OSError as exc:
            raise BackendUnavailableError(str(exc)) from exc

    def _read_line(self) -> bytes:
        while b"\r\n" not in self._buf:
            chunk = self._sock.recv(65536)
            if not chunk:
                raise BackendUnavailableError("connection closed by server")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\r\n", 1)
        return line

    def _read_exact(self, n: int) -> bytes:
        while len(self._buf) < n + 2:
            chunk = self._sock.recv(65536)
            if not chunk:
                raise BackendUnavailableError("connection closed by server")
            self._buf += chunk
        data, self._buf = self._buf[:n], self._buf[n + 2 :]
        return data

    def _read_reply(self):
        line = self._read_line()
        kind, rest = line[:1], line[1:]
        if kind == b"+":
            return rest.decode()
        if kind == b"-":
            raise StoreError(rest.decode())
        if kind == b":":
            return int(rest)
        if kind == b"$":
            n = int(rest)
            if n == -1:
                return None
            return self._read_exact(n).decode()
        if kind == b"*":
            n = int(rest)
            if n == -1:
                return None
            return [self._read_reply() for _ in range(n)]
        raise StoreError(f"unexpected reply type: {line!r}")


class ExternalKVStore(ProgramStore):
    """Client for a Redis-style server.

    Key layout: `{ns}:program:{id}` JSON record, `{ns}:children:{id}` child-id
    list, `{ns}:completed` sorted index (score = completion timestamp, ns
    resolution), `{ns}:index` insertion-order id list, `{ns}:blob:{name}`.
    CAS uses WATCH/MULTI/EXEC on the program key.
    """

    def __init__(self, address: str, namespace: str, timeout: float = 5.0) -> None:
        host, _, port = address.partition(":")
        self._conn = _RespConnection(host, int(port or 6379), timeout=timeout)
        self._lock = threading.RLock()
        self.namespace = namespace
        self._last_score = 0

    def close(self) -> None:
        self._conn.close()

    def _key(self, kind: str, suffix: str = "") -> str:
        return f"{self.namespace}:{kind}" + (f":{suffix}" if suffix else "")

    def _next_score(self) -> int:
        self._last_score = max(self._last_score + 1, time.time_ns())
        return self._last_score

    def put_program(self, program: Program, expected_version: Optional[int]) -> WriteReceipt:
        key = self._key("program", program.id)
        with self._lock:
            self._conn.command("WATCH", key)
            stored_json = self._conn.command("GET", key)
            stored = json.loads(stored_json) if stored_json else None
            try:
                if expected_version is None:
                    if stored is not None:
                        raise VersionConflictError(f"{program.id} already exists")
                    base = 0
                else:
                    if stored is None:
                        raise VersionConflictError(f"{program.id} does not exist")
                    if stored["version"] != expected_version:
                        raise VersionConflictError(
                            f"{program.id}: expected version {expected_version}, "
                            f"stored {stored['version']}"
                        )
                    base = expected_version
            except VersionConflictError:
                self._conn.command("UNWATCH")
                raise
            new_version = base + 1
            record = program.to_dict()
            record["version"] = new_version
            prev_state = stored["state"] if stored else None

            self._conn.command("MULTI")
            self._conn.command("SET", key, json.dumps(record, sort_keys=True))
            if stored is None:
                self._conn.command("RPUSH", self._key("index"), program.id)
                for parent_id in program.parent_ids:
                    self._conn.command("RPUSH", self._key("children", parent_id), program.id)
            if record["state"] == LifecycleState.COMPLETE.value and prev_state != record["state"]:
                self._conn.command(
                    "ZADD", self._key("completed"), str(self._next_score()), program.id
                )
            result = self._conn.command("EXEC")
            if result is None:
                raise VersionConflictError(f"{program.id}: concurrent write during transaction")
            return WriteReceipt(id=program.id, new_version=new_version)

    def get_program(self, program_id: str) -> Optional[Program]:
        with self._lock:
            payload = self._conn.command("GET", self._key("program", program_id))
        return Program.from_json(payload) if payload else None

    def parents(self, program_id: str) -> List[Program]:
        prog = self.require(program_id)
        return [self.require(pid) for pid in prog.parent_ids]

    def descendants(self, program_id: str) -> List[Program]:
        self.require(program_id)
        with self._lock:
            child_ids = self._conn.command("LRANGE", self._key("children", program_id), "0", "-1")
        return [self.require(cid) for cid in child_ids or []]

    def poll_completed(self, cursor: int) -> Tuple[List[Program], int]:
        with self._lock:
            raw = self._conn.command(
                "ZRANGEBYSCORE", self._key("completed"), f"({cursor}", "+inf", "WITHSCORES"
            )
        if not raw:
            return [], cursor
        pairs = [(raw[i], int(float(raw[i + 1]))) for i in range(0, len(raw), 2)]
        new_cursor = max(score for _, score in pairs)
        return [self.require(pid) for pid, _ in pairs], new_cursor

    def all_ids(self) -> List[str]:
        with self._lock:
            ids = self._conn.command("LRANGE", self._key("index"), "0", "-1")
        return list(ids or [])

    def put_blob(self, name: str, text: str) -> None:
        with self._lock:
            self._conn.command("SET", self._key("blob", name), text)

    def get_blob(self, name: str) -> Optional[str]:
        with self._lock:
            return self._conn.command("GET", self._key("blob", name))


def open_store(backend: str, address: Optional[str] = None, namespace: str = "run") -> ProgramStore:
    if backend == "memory":
        return InMemoryStore()
    if backend == "redis":
        if not address:
            raise StoreError("redis backend requires an address (host:port)")
        return ExternalKVStore(address, namespace)
    raise StoreError(f"unknown store backend {backend!r}")
