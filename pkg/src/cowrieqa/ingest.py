"""Restart-safe tailing of Cowrie JSON log files.

Offsets live in a small JSON state file keyed by path.  Delivery is
at-least-once: a crash between reading lines and :func:`commit_offset`
re-delivers them on restart, and the sink absorbs duplicates by document id.
"""

from __future__ import annotations

import dataclasses
import glob as globmod
import json
import logging
import os
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

log = logging.getLogger(__name__)

DEFAULT_POLL_MS = 500
MAX_READ_BYTES = 8 * 1024 * 1024


class CorruptStateStore(ValueError):
    pass


def file_identity(path: str | Path) -> Optional[str]:
    """``"dev:ino"`` for the file, or a ``"size:mtime"`` fallback where inodes are unavailable."""
    try:
        st = os.stat(path)
    except FileNotFoundError:
        return None
    if st.st_ino:
        return f"{st.st_dev}:{st.st_ino}"
    return f"fallback:{st.st_size}:{st.st_mtime_ns}"


@dataclass(frozen=True)
class TailState:
    path: str
    offset: int = 0
    identity: Optional[str] = None


class StateStore:
    """JSON file mapping path -> {"offset", "identity"}; writes are atomic renames."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._data: Dict[str, dict] = self._read()

    def _read(self) -> Dict[str, dict]:
        try:
            with open(self.path, encoding="utf-8") as fh:
                data = json.load(fh)
            if not isinstance(data, dict) or not all(
                isinstance(v, dict) and isinstance(v.get("offset"), int) for v in data.values()
            ):
                raise CorruptStateStore(f"{self.path}: unexpected layout")
            return data
        except FileNotFoundError:
            return {}
        except (ValueError, CorruptStateStore) as exc:
            log.warning("ignoring corrupt tail state store %s (%s); starting fresh", self.path, exc)
            return {}

    def get(self, path: str) -> Optional[TailState]:
        with self._lock:
            entry = self._data.get(path)
        if entry is None:
            return None
        return TailState(path, entry["offset"], entry.get("identity"))

    def put(self, state: TailState) -> None:
        with self._lock:
            self._data[state.path] = {"offset": state.offset, "identity": state.identity}
            payload = json.dumps(self._data, indent=2, sort_keys=True)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.path.parent, prefix=self.path.name, suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(payload + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, self.path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise


def open_tail(path: str | Path, state_store: StateStore) -> TailState:
    """Resume from the stored offset if the file is still the same file, else start at 0."""
    path = str(path)
    ident = file_identity(path)
    saved = state_store.get(path)
    if saved is not None and ident is not None and saved.identity == ident:
        return saved
    return TailState(path, 0, ident)


def poll_lines(state: TailState, max_bytes: int = MAX_READ_BYTES) -> Tuple[List[str], TailState]:
    """Complete new lines since ``state.offset``.

    A trailing partial line is held back.  A replaced file (new identity) or a
    truncated one (size below offset) is re-read from the start.
    """
    ident = file_identity(state.path)
    if ident is None:
        return [], state
    offset = state.offset
    if state.identity is not None and ident != state.identity:
        offset = 0
    try:
        with open(state.path, "rb") as fh:
            size = os.fstat(fh.fileno()).st_size
            if size < offset:
                log.info("%s truncated (%d < %d); rereading from start", state.path, size, offset)
                offset = 0
            if size == offset:
                return [], dataclasses.replace(state, offset=offset, identity=ident)
            fh.seek(offset)
            data = fh.read(min(size - offset, max_bytes))
    except FileNotFoundError:
        return [], state
    end = data.rfind(b"\n")
    if end < 0:
        return [], dataclasses.replace(state, offset=offset, identity=ident)
    chunk = data[: end + 1]
    lines = [raw.decode("utf-8", errors="replace") for raw in chunk.split(b"\n")[:-1]]
    return lines, TailState(state.path, offset + len(chunk), ident)


def commit_offset(state: TailState, state_store: StateStore) -> None:
    state_store.put(state)


class Harvester:
    """Tails every file matching a glob; new files are picked up on each poll."""

    def __init__(self, log_glob: str, state_store: StateStore):
        self.log_glob = log_glob
        self.store = state_store
        self.states: Dict[str, TailState] = {}

    def _discover(self) -> None:
        for path in sorted(globmod.glob(self.log_glob)):
            if path not in self.states and os.path.isfile(path):
                self.states[path] = open_tail(path, self.store)

    def poll(self) -> List[Tuple[str, List[str]]]:
        """One pass over all files; returns ``(path, lines)`` for files with new lines."""
        self._discover()
        out = []
        for path in sorted(self.states):
            lines, self.states[path] = poll_lines(self.states[path])
            if lines:
                out.append((path, lines))
        return out

    def commit(self) -> None:
        for state in self.states.values():
            saved = self.store.get(state.path)
            if saved != state:
                commit_offset(state, self.store)
