"""Lazy read-only access to binary files.

A data item is just a byte offset plus its type.  Member offsets are found
on demand by skipping earlier members, reading only counts, tags, selectors
and string lengths; those offsets go into a per-session LRU cache.

    s = open_binary("traj.sf")
    s.root()["timesteps"][1]["coordinates"].get_matrix()
    s.bytes_read        # far less than the file size
"""
from __future__ import annotations

import os
import threading
from collections import OrderedDict
from typing import Optional

from . import errors as E
from .binary import BufferSource, FileHeader, FileSource, Scanner, scan_header
from .data import DataHandle, DataImpl
from .types import FREE, AnyType, Array, Num, Str, Struct, TypeEnv

DEFAULT_CACHE = 65536


def _cache_size_from_env() -> int:
    raw = os.environ.get("STRUCTFILE_CACHE")
    if raw is None:
        return DEFAULT_CACHE
    try:
        n = int(raw)
    except ValueError:
        return DEFAULT_CACHE
    return max(n, 0)


class _Children:
    """Member offsets of one composite, discovered left to right."""

    __slots__ = ("typ", "offsets", "scan", "n", "active")

    def __init__(self, typ, scan, n, active=None):
        self.typ = typ          # kept so the id() in the cache key stays valid
        self.offsets = []       # offset per child; None for absent optional fields
        self.scan = scan        # end of the last discovered child, None if not yet known
        self.n = n
        self.active = active


class FileSession:
    """An open binary file with lazy, cached offset computation.

    Safe for concurrent readers: the byte source uses positioned reads and
    the offset cache is guarded by a lock.
    """

    def __init__(self, source, header: Optional[FileHeader] = None, cache_size: Optional[int] = None,
                 strict: bool = False):
        self.source = source
        if header is None:
            header = scan_header(source.read(0, _header_len(source)))
        if not header.is_binary:
            raise E.WrongMode("file is in TEXT mode; use the text reader")
        self.header = header
        self.env = header.env
        self.scanner = Scanner(source, header.order, strict)
        self.cache_size = _cache_size_from_env() if cache_size is None else cache_size
        self._cache: "OrderedDict[tuple, _Children]" = OrderedDict()
        self._lock = threading.RLock()
        self._header_bytes = source.bytes_read

    @property
    def bytes_read(self) -> int:
        """Data bytes read so far (header excluded)."""
        return self.source.bytes_read - self._header_bytes

    @property
    def file_size(self) -> int:
        return self.source.length

    def root(self) -> DataHandle:
        return DataHandle(make_stream(self, self.env.root, self.env, self.header.data_start))

    def check_end(self) -> int:
        """Skip the whole root value; TrailingData if bytes remain after it."""
        end = self.scanner.skip(self.env.root, self.env, self.header.data_start)
        if end != self.source.length:
            raise E.TrailingData(f"{self.source.length - end} bytes after the end of the data",
                                 end)
        return end

    def close(self):
        close = getattr(self.source, "close", None)
        if close:
            close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # offsets -------------------------------------------------------------
    def _entry(self, node: "StreamImpl") -> _Children:
        key = (node.offset, id(node.typ))
        hit = self._cache.get(key)
        if hit is not None and hit.typ is node.typ:
            self._cache.move_to_end(key)
            return hit
        ent = self._new_entry(node)
        if self.cache_size > 0:
            self._cache[key] = ent
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return ent

    def _new_entry(self, node):
        t, pos, sc = node.typ, node.offset, self.scanner
        if isinstance(t, Array):
            if t.size is FREE:
                n = sc.count(pos, "array count")
                pos += 4
                sc.check_elements(n, sc.min_size(t.elem, node.env), pos, "array count")
            else:
                n = t.size
            return _Children(t, pos, n)
        if t.is_union:
            return _Children(t, pos + 2, 1, sc.selector(pos, t))
        return _Children(t, pos, len(t.fields))

    def child_offset(self, node: "StreamImpl", k: int) -> Optional[int]:
        """Offset of member ``k`` (None for an absent optional field)."""
        t = node.typ
        with self._lock:
            ent = self._entry(node)
            if isinstance(t, Array):
                if not 0 <= k < ent.n:
                    raise E.IndexOutOfRange(f"element index {k} out of range 0..{ent.n - 1}")
                variable, size = node.env.layout(t.elem)
                if not variable:
                    return ent.scan + k * size
            elif t.is_union:
                return ent.scan
            while len(ent.offsets) <= k:
                i = len(ent.offsets)
                if ent.scan is None:
                    prev = t.elem if isinstance(t, Array) else t.fields[i - 1].typ
                    ent.scan = self.scanner.skip(prev, node.env, ent.offsets[i - 1],
                                                 node.depth + 1)
                pos = ent.scan
                if isinstance(t, Struct) and t.fields[i].optional:
                    present = self.scanner.tag(pos)
                    pos += 1
                    if not present:
                        ent.offsets.append(None)
                        ent.scan = pos
                        continue
                ent.offsets.append(pos)
                ent.scan = None     # end of this child is found only if a later one is wanted
            return ent.offsets[k]

    def n_elements(self, node) -> int:
        with self._lock:
            return self._entry(node).n

    def active_field(self, node) -> int:
        with self._lock:
            return self._entry(node).active


def _header_len(source) -> int:
    """Length of the header, found by reading lines up to DATA."""
    pos = 0
    chunk = 4096
    buf = b""
    while True:
        n = min(chunk, source.length - pos)
        if n <= 0:
            return len(buf)
        buf += source.read(pos, n)
        pos += n
        i = buf.find(b"\nDATA")
        while i >= 0:
            j = buf.find(b"\n", i + 1)
            if j < 0:
                break
            if buf[i + 1:j].strip() == b"DATA":
                return j + 1
            i = buf.find(b"\nDATA", i + 1)
        chunk *= 2


class StreamImpl(DataImpl):
    """A value inside a binary file, read on demand."""

    read_only = True

    __slots__ = ("session", "typ", "env", "offset", "depth", "via_any")

    def __init__(self, session: FileSession, t, env: TypeEnv, offset: int, depth: int = 0,
                 via_any: bool = False):
        self.via_any = via_any  # stands in for an any slot; env is the bound type's
        self.session = session
        self.typ = t
        self.env = env
        self.offset = offset
        self.depth = depth

    def _ro(self, op):
        raise E.ReadOnly(f"{op}(): file data opened for reading cannot be modified")

    def _child(self, t, k):
        off = self.session.child_offset(self, k)
        return make_stream(self.session, t, self.env, off, self.depth + 1)

    def n_fields(self):
        if not isinstance(self.typ, Struct):
            self._wrong("n_fields")
        return len(self.typ.fields)

    def _fidx(self, i):
        n = len(self.typ.fields)
        if isinstance(i, bool) or not isinstance(i, int) or not 0 <= i < n:
            raise E.IndexOutOfRange(f"field index {i} out of range 0..{n - 1}")
        return i

    def get_field(self, i):
        t = self.typ
        if not isinstance(t, Struct):
            self._wrong("get_field")
        i = self._fidx(i)
        if t.is_union:
            a = self.session.active_field(self)
            if i != a:
                raise E.InactiveUnionField(
                    f"union field {t.fields[i].name!r} is not the active one ({t.fields[a].name!r})")
            return self._child(t.fields[i].typ, 0)
        off = self.session.child_offset(self, i)
        if off is None:
            raise E.FieldNotPresent(f"optional field {t.fields[i].name!r} is not present")
        return make_stream(self.session, t.fields[i].typ, self.env, off, self.depth + 1)

    def field_present(self, i):
        t = self.typ
        if not isinstance(t, Struct):
            self._wrong("field_present")
        i = self._fidx(i)
        if t.is_union:
            return self.session.active_field(self) == i
        if not t.fields[i].optional:
            return True
        return self.session.child_offset(self, i) is not None

    def get_active_field(self):
        if not isinstance(self.typ, Struct) or not self.typ.is_union:
            self._wrong("get_active_field")
        return self.session.active_field(self)

    def n_elements(self):
        if not isinstance(self.typ, Array):
            self._wrong("n_elements")
        return self.session.n_elements(self)

    def get_elem(self, i):
        if not isinstance(self.typ, Array):
            self._wrong("get_elem")
        if isinstance(i, bool) or not isinstance(i, int):
            raise E.IndexOutOfRange(f"bad element index {i!r}")
        return self._child(self.typ.elem, i)

    def get_scalar(self):
        t = self.typ
        if not isinstance(t, Num) or t.dims:
            self._wrong("get_scalar")
        return self.session.scanner.read_scalar(t.kind, self.offset)

    def get_string(self):
        t = self.typ
        if not isinstance(t, Str):
            self._wrong("get_string")
        sc = self.session.scanner
        pos = self.offset
        if t.size is FREE:
            n = sc.count(pos, "string length")
            pos += 4
            sc.check_elements(n, 1, pos, "string length")
        else:
            n = t.size
        return sc.src.read(pos, n)

    def get_matrix(self):
        t = self.typ
        if not isinstance(t, Num) or not t.dims:
            self._wrong("get_matrix")
        impl, _ = self.session.scanner.decode(t, self.env, self.offset, self.depth)
        return impl.value



def _read_only(name):
    def method(self, *args):
        self._ro(name)
    method.__name__ = name
    return method


for _op in ("set_field_present", "unset_field", "set_active_field", "resize", "assign_scalar",
            "assign_string", "assign_matrix", "assign_int", "assign_double", "actualize_type"):
    setattr(StreamImpl, _op, _read_only(_op))
del _op


def make_stream(session, t, env, offset, depth=0, via_any=False) -> DataImpl:
    """Lazy node for the value of type ``t`` at ``offset``.

    An any-typed slot resolves to a node of its actual type at once, so
    readers never see the any type.
    """
    t = env.unref(t)
    if isinstance(t, AnyType):
        aenv, vpos = session.scanner.any_type(offset)
        return make_stream(session, aenv.root, aenv, vpos, depth + 1, True)
    return StreamImpl(session, t, env, offset, depth, via_any)


def open_binary(source, cache_size: Optional[int] = None, strict: bool = False) -> FileSession:
    """Open a binary structured file (path, bytes, or byte source) lazily."""
    if isinstance(source, (bytes, bytearray, memoryview)):
        src = BufferSource(source)
    elif isinstance(source, (str, os.PathLike)):
        src = FileSource(source)
    else:
        src = source
    try:
        return FileSession(src, None, cache_size, strict)
    except BaseException:
        close = getattr(src, "close", None)
        if close:
            close()
        raise


def child_offset(node: DataHandle, k: int) -> Optional[int]:
    impl = node.impl
    if not isinstance(impl, StreamImpl):
        raise E.WrongType("child_offset() needs a file-backed handle")
    t = impl.typ
    if not isinstance(t, (Struct, Array)):
        raise E.NoChildren("only structs, unions and arrays have members")
    return impl.session.child_offset(impl, k)


def lazy_handle(session: FileSession, offset: Optional[int] = None, t=None,
                env: Optional[TypeEnv] = None) -> DataHandle:
    if offset is None:
        return session.root()
    env = env or session.env
    return DataHandle(make_stream(session, t if t is not None else env.root, env, offset))
