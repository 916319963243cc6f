"""Block-structured random-access store (a file managed like a heap).

File layout, all little-endian::

    superblock (64 bytes)
        magic "SFSTORE\\0", version u32, reserved u32,
        root address u64, type-text address u64, free-list head u64,
        file length u64, zero padding
    blocks, back to back up to the file length; each block is
        capacity u32, used u32, flags u32 (1 = free, 2 = live), reserved u32
        followed by ``capacity`` payload bytes.  A free block keeps the
        address of the next free block in its first 8 payload bytes.

Capacities are powers of two (at least 16) when allocated, so small growth
happens in place.  The free list is kept sorted by address and adjacent
free blocks are always merged.

Structured data is laid out with the inlining rule: a fixed-size value is
stored directly in its parent's block; a variable-size value gets a block
of its own and the parent holds its 8-byte address (0 = absent).
"""
from __future__ import annotations

import bisect
import fcntl
import os
import struct
import threading
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import errors as E
from .data import (AnyData, DataHandle, DataImpl, check_scalar, encode_text, fit_string,
                   to_matrix)
from .ddl import parse_type_text
from .matrix import MatrixValue
from .types import (FREE, AnyType, Array, Num, NumKind, Str, Struct, TypeEnv, print_env)

MAGIC = b"SFSTORE\0"
VERSION = 1
SUPER = 64
HDR = 16
MIN_CAP = 16
FLAG_FREE = 1
FLAG_LIVE = 2

_SUPER = struct.Struct("<8sII4Q")
_HDR = struct.Struct("<IIII")
_U64 = struct.Struct("<Q")
_U32 = struct.Struct("<I")
_I32 = struct.Struct("<i")
_U16 = struct.Struct("<H")


def bucket(size: int) -> int:
    """Capacity handed out for a request of ``size`` bytes."""
    cap = MIN_CAP
    while cap < size:
        cap <<= 1
    return cap


class BlockHandle:
    """A locked in-memory copy of one block's payload.

    Changes are written back by :meth:`release` only if something was written.
    """

    def __init__(self, store: "MallocFile", address: int, data: bytearray):
        self.store = store
        self.address = address
        self.data = data
        self.dirty = False
        self.released = False

    def read(self, off: int = 0, n: Optional[int] = None) -> bytes:
        if n is None:
            n = len(self.data) - off
        if off < 0 or off + n > len(self.data):
            raise E.IndexOutOfRange(f"bytes {off}..{off + n} outside the block payload")
        return bytes(self.data[off:off + n])

    def write(self, off: int, raw: bytes) -> None:
        if self.released:
            raise E.DoubleRelease("handle already released")
        if off < 0 or off + len(raw) > len(self.data):
            raise E.IndexOutOfRange(f"bytes {off}..{off + len(raw)} outside the block payload")
        self.data[off:off + len(raw)] = raw
        self.dirty = True

    def release(self) -> None:
        self.store.release_block(self)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if not self.released:
            self.release()


class MallocFile:
    """Heap-like block allocator over one file, plus the structured data root."""

    def __init__(self, path, fd: int, readonly: bool, lock_policy: str, wait_timeout: float):
        self.path = path
        self.fd = fd
        self.readonly = readonly
        self.lock_policy = lock_policy
        self.wait_timeout = wait_timeout
        self.root_addr = 0
        self.type_addr = 0
        self.length = SUPER
        self.cap: Dict[int, int] = {}
        self.used: Dict[int, int] = {}
        self.addrs: List[int] = []
        self.free_addrs: List[int] = []
        self.is_free: Dict[int, bool] = {}
        self.env: Optional[TypeEnv] = None
        self.payload_writes = 0
        self._open: Dict[int, BlockHandle] = {}
        self._cond = threading.Condition()
        self._any_envs: Dict[bytes, TypeEnv] = {}

    # -- opening -----------------------------------------------------------
    @classmethod
    def create(cls, path, typ=None, lock_policy: str = "error", wait_timeout: float = 5.0):
        """New empty store; with a type, also an initialized root value."""
        fd = os.open(path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
        store = cls._locked(path, fd, False, lock_policy, wait_timeout)
        store._write_super()
        if typ is not None:
            if isinstance(typ, str):
                typ = parse_type_text(typ)
            env = typ if isinstance(typ, TypeEnv) else TypeEnv(typ)
            store.env = env
            text = print_env(env).encode("utf-8")
            store.type_addr = store.alloc(len(text))
            store.write(store.type_addr, 0, text)
            store.root_addr = _Layout(store).create(env.root, env)
            store._write_super()
        return store

    @classmethod
    def open(cls, path, readonly: bool = False, lock_policy: str = "error",
             wait_timeout: float = 5.0):
        fd = os.open(path, os.O_RDONLY if readonly else os.O_RDWR)
        store = cls._locked(path, fd, readonly, lock_policy, wait_timeout)
        try:
            store._load()
        except BaseException:
            store.close()
            raise
        return store

    @classmethod
    def _locked(cls, path, fd, readonly, lock_policy, wait_timeout):
        try:
            fcntl.flock(fd, (fcntl.LOCK_SH if readonly else fcntl.LOCK_EX) | fcntl.LOCK_NB)
        except BlockingIOError:
            os.close(fd)
            raise E.StoreLocked(f"{path} is in use by another writer") from None
        if lock_policy not in ("error", "wait"):
            os.close(fd)
            raise ValueError("lock_policy must be 'error' or 'wait'")
        return cls(path, fd, readonly, lock_policy, wait_timeout)

    def _load(self):
        report = verify_fd(self.fd)
        if report.problems:
            inv, msg = report.problems[0]
            raise E.StoreCorrupt(msg, inv)
        self.root_addr, self.type_addr = report.root, report.type_addr
        self.length = report.length
        for a, cap, used, free in report.blocks:
            self.addrs.append(a)
            self.cap[a] = cap
            self.used[a] = used
            self.is_free[a] = free
            if free:
                self.free_addrs.append(a)
        if self.type_addr:
            text = self.read(self.type_addr, 0, self.used[self.type_addr])
            self.env = parse_type_text(text.decode("utf-8"))

    def close(self):
        if self.fd >= 0:
            if not self.readonly:
                os.fsync(self.fd)
            fcntl.flock(self.fd, fcntl.LOCK_UN)
            os.close(self.fd)
            self.fd = -1

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- raw io ------------------------------------------------------------
    def _pwrite(self, pos, raw):
        if self.readonly:
            raise E.ReadOnly("store opened read-only")
        os.pwrite(self.fd, raw, pos)

    def _write_super(self):
        head = self.free_addrs[0] if self.free_addrs else 0
        self._pwrite(0, _SUPER.pack(MAGIC, VERSION, 0, self.root_addr, self.type_addr, head,
                                    self.length).ljust(SUPER, b"\0"))

    def _write_hdr(self, a):
        flags = FLAG_FREE if self.is_free[a] else FLAG_LIVE
        self._pwrite(a, _HDR.pack(self.cap[a], self.used[a], flags, 0))

    def _set_next(self, a, nxt):
        self._pwrite(a + HDR, _U64.pack(nxt))

    def _check_writable(self):
        if self.readonly:
            raise E.ReadOnly("store opened read-only")

    def _check_live(self, a):
        if a not in self.cap or self.is_free[a]:
            raise E.BadAddress(f"no live block at address {a}")

    def _check_unlocked(self, a):
        if a in self._open:
            raise E.BlockLocked(f"block {a} is open through a handle")

    def read(self, a: int, off: int, n: int) -> bytes:
        self._check_live(a)
        if off < 0 or off + n > self.used[a]:
            raise E.StoreCorrupt(f"read of {off}..{off + n} beyond block {a} "
                                 f"({self.used[a]} bytes used)", "in-bounds")
        return os.pread(self.fd, n, a + HDR + off)

    def write(self, a: int, off: int, raw: bytes) -> None:
        self._check_live(a)
        self._check_unlocked(a)
        if off < 0 or off + len(raw) > self.used[a]:
            raise E.StoreCorrupt(f"write of {off}..{off + len(raw)} beyond block {a}",
                                 "in-bounds")
        self.payload_writes += 1
        self._pwrite(a + HDR + off, raw)

    def block_info(self, a: int) -> Tuple[int, int]:
        """``(capacity, used)`` of a live block."""
        self._check_live(a)
        return self.cap[a], self.used[a]

    def free_list(self) -> List[int]:
        return list(self.free_addrs)

    def live_blocks(self) -> List[int]:
        return [a for a in self.addrs if not self.is_free[a]]

    # -- free list maintenance ---------------------------------------------------
    def _fl_insert(self, a):
        k = bisect.bisect_left(self.free_addrs, a)
        self.free_addrs.insert(k, a)
        nxt = self.free_addrs[k + 1] if k + 1 < len(self.free_addrs) else 0
        self._set_next(a, nxt)
        if k > 0:
            self._set_next(self.free_addrs[k - 1], a)

    def _fl_remove(self, a):
        k = bisect.bisect_left(self.free_addrs, a)
        del self.free_addrs[k]
        if k > 0:
            nxt = self.free_addrs[k] if k < len(self.free_addrs) else 0
            self._set_next(self.free_addrs[k - 1], nxt)

    def _new_block(self, a, cap, used, free):
        bisect.insort(self.addrs, a)
        self.cap[a] = cap
        self.used[a] = used
        self.is_free[a] = free

    def _drop_block(self, a):
        k = bisect.bisect_left(self.addrs, a)
        del self.addrs[k]
        del self.cap[a], self.used[a], self.is_free[a]

    def _split(self, a, keep):
        """Cut the tail of block ``a`` beyond ``keep`` capacity into a free block."""
        rest = self.cap[a] - keep - HDR
        if rest < MIN_CAP:
            return
        self.cap[a] = keep
        b = a + HDR + keep
        self._new_block(b, rest, 0, True)
        self._write_hdr(b)
        nxt = b + HDR + rest
        if nxt in self.cap and self.is_free[nxt]:
            self._fl_remove(nxt)
            self.cap[b] += HDR + self.cap[nxt]
            self._drop_block(nxt)
            self._write_hdr(b)
        self._fl_insert(b)

    def _zero(self, a, off, n):
        if n > 0:
            self._pwrite(a + HDR + off, bytes(n))

    # -- allocation ------------------------------------------------------------
    def alloc(self, size: int) -> int:
        """First-fit allocation of a zero-filled block of ``size`` bytes."""
        if size < 0:
            raise ValueError("negative block size")
        self._check_writable()
        need = bucket(size)
        for a in self.free_addrs:
            if self.cap[a] >= need:
                self._fl_remove(a)
                self.is_free[a] = False
                self.used[a] = size
                self._split(a, need)
                self._zero(a, 0, self.cap[a])
                self._write_hdr(a)
                self._write_super()
                return a
        a = self.length
        self.length += HDR + need
        self._new_block(a, need, size, False)
        os.ftruncate(self.fd, self.length)
        self._write_hdr(a)
        self._write_super()
        return a

    def free(self, a: int) -> None:
        if a == 0:
            raise E.BadAddress("cannot free the null address")
        self._check_writable()
        self._check_live(a)
        self._check_unlocked(a)
        self.is_free[a] = True
        self.used[a] = 0
        nxt = a + HDR + self.cap[a]
        if nxt in self.cap and self.is_free[nxt]:
            self._fl_remove(nxt)
            self.cap[a] += HDR + self.cap[nxt]
            self._drop_block(nxt)
        k = bisect.bisect_left(self.addrs, a)
        prev = self.addrs[k - 1] if k > 0 else None
        if prev is not None and self.is_free[prev]:
            self.cap[prev] += HDR + self.cap[a]
            self._drop_block(a)
            self._write_hdr(prev)
        else:
            self._write_hdr(a)
            self._fl_insert(a)
        self._write_super()

    def resize(self, a: int, size: int) -> int:
        """Change a block's size; returns its (possibly new) address.

        Contents up to the smaller size are kept; grown bytes read as zero.
        """
        self._check_writable()
        self._check_live(a)
        self._check_unlocked(a)
        old = self.used[a]
        if size <= self.cap[a]:
            self.used[a] = size
            if size > old:
                self._zero(a, old, size - old)
            self._write_hdr(a)
            return a
        end = a + HDR + self.cap[a]
        nxt = end if end in self.cap else None
        if nxt is not None and self.is_free[nxt] and self.cap[a] + HDR + self.cap[nxt] >= size:
            self._fl_remove(nxt)
            self.cap[a] += HDR + self.cap[nxt]
            self._drop_block(nxt)
            self._split(a, max(bucket(size), MIN_CAP))
            self.used[a] = size
            self._zero(a, old, size - old)
            self._write_hdr(a)
            self._write_super()
            return a
        if end == self.length:
            grow = bucket(size) - self.cap[a]
            self.length += grow
            os.ftruncate(self.fd, self.length)
            self.cap[a] += grow
            self.used[a] = size
            self._zero(a, old, size - old)
            self._write_hdr(a)
            self._write_super()
            return a
        data = os.pread(self.fd, old, a + HDR)
        b = self.alloc(size)
        self._pwrite(b + HDR, data)
        self.free(a)
        return b

    # -- handles ---------------------------------------------------------------
    def open_block(self, a: int, policy: Optional[str] = None) -> BlockHandle:
        self._check_live(a)
        policy = policy or self.lock_policy
        with self._cond:
            if a in self._open:
                if policy == "error":
                    raise E.BlockLocked(f"block {a} is already open")
                if not self._cond.wait_for(lambda: a not in self._open, self.wait_timeout):
                    raise E.BlockLocked(f"timed out waiting for block {a}")
                self._check_live(a)
            data = bytearray(os.pread(self.fd, self.used[a], a + HDR))
            h = BlockHandle(self, a, data)
            self._open[a] = h
            return h

    def release_block(self, h: BlockHandle) -> None:
        with self._cond:
            if h.released or self._open.get(h.address) is not h:
                raise E.DoubleRelease(f"handle for block {h.address} was already released")
            if h.dirty:
                self.payload_writes += 1
                self._pwrite(h.address + HDR, bytes(h.data))
            h.released = True
            del self._open[h.address]
            self._cond.notify_all()

    # -- structured data -------------------------------------------------------
    def root(self) -> DataHandle:
        """Mutable handle on the stored value."""
        if self.env is None:
            raise E.NullHandle("store holds no typed root value")
        return DataHandle(block_node(self, ()))

    def set_root(self, a: int) -> None:
        self.root_addr = a
        self._write_super()

    def any_env(self, text: bytes) -> TypeEnv:
        env = self._any_envs.get(text)
        if env is None:
            env = self._any_envs[text] = parse_type_text(text.decode("utf-8"))
        return env

    def verify(self) -> "VerifyReport":
        return verify_fd(self.fd)


def store_handle(store: MallocFile) -> DataHandle:
    return store.root()


# -- verification -------------------------------------------------------------

class VerifyReport:
    def __init__(self):
        self.problems: List[Tuple[str, str]] = []
        self.blocks: List[Tuple[int, int, int, bool]] = []
        self.root = 0
        self.type_addr = 0
        self.length = 0

    @property
    def ok(self) -> bool:
        return not self.problems

    def add(self, invariant, message):
        self.problems.append((invariant, message))

    def raise_first(self):
        if self.problems:
            inv, msg = self.problems[0]
            raise E.StoreCorrupt(f"{inv}: {msg}", inv)


def verify_fd(fd: int) -> VerifyReport:
    """Walk a store file and check every allocator invariant."""
    r = VerifyReport()
    size = os.fstat(fd).st_size
    raw = os.pread(fd, SUPER, 0)
    if len(raw) < SUPER:
        r.add("superblock", "file is shorter than the superblock")
        return r
    magic, version, _, root, type_addr, head, length = _SUPER.unpack(raw[:_SUPER.size])
    if magic != MAGIC:
        r.add("superblock", "bad magic")
        return r
    if version != VERSION:
        r.add("superblock", f"unsupported store version {version}")
        return r
    if length != size:
        r.add("file-length", f"superblock says {length} bytes, file has {size}")
    r.root, r.type_addr, r.length = root, type_addr, length
    pos = SUPER
    flagged_free = []
    prev_free = False
    end = min(length, size)
    while pos < end:
        if pos + HDR > end:
            r.add("partition", f"block header at {pos} runs past the end of the file")
            return r
        cap, used, flags, _ = _HDR.unpack(os.pread(fd, HDR, pos))
        if flags not in (FLAG_FREE, FLAG_LIVE):
            r.add("block-header", f"block {pos} has bad flags {flags}")
            return r
        if cap < MIN_CAP or pos + HDR + cap > end:
            r.add("partition", f"block {pos} capacity {cap} overruns the file body")
            return r
        free = flags == FLAG_FREE
        if not free and used > cap:
            r.add("block-header", f"block {pos} uses {used} of {cap} bytes")
        if free and prev_free:
            r.add("coalesced", f"free blocks before {pos} and at {pos} are not merged")
        prev_free = free
        r.blocks.append((pos, cap, used, free))
        if free:
            flagged_free.append(pos)
        pos += HDR + cap
    if pos != end:
        r.add("partition", f"blocks end at {pos}, body ends at {end}")
    # free list
    chain = []
    seen = set()
    a = head
    free_set = set(flagged_free)
    while a:
        if a in seen:
            r.add("free-list", f"free list loops at {a}")
            break
        if a not in free_set:
            r.add("free-list", f"free list entry {a} is not a free block")
            break
        if chain and a <= chain[-1]:
            r.add("free-list", f"free list is not sorted at {a}")
        seen.add(a)
        chain.append(a)
        a = _U64.unpack(os.pread(fd, 8, a + HDR))[0]
    if not r.problems and set(chain) != free_set:
        missing = sorted(free_set - set(chain))
        r.add("free-list", f"free blocks {missing[:5]} are not on the free list")
    live = {b[0] for b in r.blocks if not b[3]}
    if root and root not in live:
        r.add("root", f"root address {root} is not a live block")
    if type_addr and type_addr not in live:
        r.add("root", f"type block address {type_addr} is not a live block")
    return r


def verify_store(path) -> VerifyReport:
    fd = os.open(path, os.O_RDONLY)
    try:
        return verify_fd(fd)
    finally:
        os.close(fd)


# -- structured layout -----------------------------------------------------------

def _order_bytes(kind, raw):
    return raw[::-1] if kind is NumKind.F16 else raw


class _Layout:
    """Sizes and default construction of block contents."""

    def __init__(self, store: MallocFile):
        self.store = store

    @staticmethod
    def fixed(t, env) -> Optional[int]:
        variable, size = env.layout(t)
        return None if variable else size

    @classmethod
    def slot(cls, t, env) -> int:
        """Bytes a value of type ``t`` takes inside its parent."""
        size = cls.fixed(t, env)
        return 8 if size is None else size

    @classmethod
    def field_offsets(cls, t: Struct, env) -> List[int]:
        offs, pos = [], 0
        for f in t.fields:
            offs.append(pos)
            pos += (1 if f.optional else 0) + cls.slot(f.typ, env)
        offs.append(pos)
        return offs

    def create(self, t, env) -> int:
        """Allocate a block holding the default value of ``t``; returns its address."""
        t = env.unref(t)
        size = self.fixed(t, env)
        st = self.store
        if size is not None:
            return st.alloc(size)
        if isinstance(t, Num):
            return st.alloc(4 * sum(1 for d in t.dims if d is FREE))
        if isinstance(t, Str):
            return st.alloc(4)
        if isinstance(t, AnyType):
            return st.alloc(4)
        if isinstance(t, Struct):
            if t.is_union:
                f = t.fields[0]
                a = st.alloc(2 + self.slot(f.typ, env))
                self.fill_slot(a, 2, f.typ, env)
                return a
            offs = self.field_offsets(t, env)
            a = st.alloc(offs[-1])
            for f, off in zip(t.fields, offs):
                if not f.optional:
                    self.fill_slot(a, off, f.typ, env)
            return a
        if isinstance(t, Array):
            if t.size is FREE:
                return st.alloc(4)
            slot = self.slot(t.elem, env)
            a = st.alloc(t.size * slot)
            for i in range(t.size):
                self.fill_slot(a, i * slot, t.elem, env)
            return a
        raise E.ValidationError(f"not a type node: {t!r}")

    def fill_slot(self, a, off, t, env):
        """Default value into a zeroed slot: nothing inline, a new block otherwise."""
        if self.fixed(t, env) is None:
            child = self.create(t, env)
            self.store.write(a, off, _U64.pack(child))

    def free_tree(self, a, t, env):
        """Free block ``a`` holding a value of ``t`` and every block below it."""
        t = env.unref(t)
        st = self.store
        if isinstance(t, AnyType):
            n = _U32.unpack(st.read(a, 0, 4))[0]
            if n:
                aenv = st.any_env(st.read(a, 4, n))
                self._free_slot(a, 4 + n, aenv.root, aenv)
            st.free(a)
            return
        if self.fixed(t, env) is not None:
            st.free(a)
            return
        if isinstance(t, Struct):
            if t.is_union:
                s = _U16.unpack(st.read(a, 0, 2))[0]
                self._free_slot(a, 2, t.fields[s].typ, env)
            else:
                offs = self.field_offsets(t, env)
                for f, o in zip(t.fields, offs):
                    if f.optional:
                        if st.read(a, o, 1) == b"\0":
                            continue
                        o += 1
                    self._free_slot(a, o, f.typ, env)
        elif isinstance(t, Array):
            base = 0
            n = t.size
            if n is FREE:
                n = _I32.unpack(st.read(a, 0, 4))[0]
                base = 4
            if self.fixed(t.elem, env) is None:
                for i in range(n):
                    self._free_slot(a, base + 8 * i, t.elem, env)
        st.free(a)

    def _free_slot(self, a, off, t, env):
        if self.fixed(t, env) is None:
            child = _U64.unpack(self.store.read(a, off, 8))[0]
            if child:
                self.free_tree(child, t, env)


class _Loc:
    """Where a value lives: block ``addr``, payload offset ``off``.

    ``slot`` is the ``(block, offset)`` holding this value's address when it
    has a block of its own (None for inline values and for the root).
    """

    __slots__ = ("addr", "off", "typ", "env", "slot")

    def __init__(self, addr, off, typ, env, slot):
        self.addr = addr
        self.off = off
        self.typ = typ
        self.env = env
        self.slot = slot


def _child_loc(store, p: _Loc, i: int) -> _Loc:
    """Location of member ``i`` of the composite at ``p`` (any is resolved)."""
    t, env = p.typ, p.env
    if isinstance(t, Struct):
        if not isinstance(i, int) or isinstance(i, bool) or not 0 <= i < len(t.fields):
            raise E.IndexOutOfRange(f"field index {i} out of range 0..{len(t.fields) - 1}")
        f = t.fields[i]
        if t.is_union:
            s = _U16.unpack(store.read(p.addr, p.off, 2))[0]
            if s != i:
                raise E.InactiveUnionField(f"union field {f.name!r} is not the active one "
                                           f"({t.fields[s].name!r})")
            off = p.off + 2
        else:
            off = p.off + _Layout.field_offsets(t, env)[i]
            if f.optional:
                if store.read(p.addr, off, 1) == b"\0":
                    raise E.FieldNotPresent(f"optional field {f.name!r} is not present")
                off += 1
        return _slot_loc(store, p.addr, off, f.typ, env)
    if isinstance(t, Array):
        base, n = p.off, t.size
        if n is FREE:
            n = _I32.unpack(store.read(p.addr, p.off, 4))[0]
            base += 4
        if not isinstance(i, int) or isinstance(i, bool) or not 0 <= i < n:
            raise E.IndexOutOfRange(f"element index {i} out of range 0..{n - 1}")
        return _slot_loc(store, p.addr, base + i * _Layout.slot(t.elem, env), t.elem, env)
    raise E.WrongType("member access on a value without members")


def _slot_loc(store, addr, off, t, env) -> _Loc:
    t = env.unref(t)
    if _Layout.fixed(t, env) is not None:
        return _Loc(addr, off, t, env, None)
    child = _U64.unpack(store.read(addr, off, 8))[0]
    if child == 0:
        raise E.UnsetReference(f"null block address at {addr}+{off}")
    return _Loc(child, 0, t, env, (addr, off))


def _any_value(store, loc: _Loc) -> Optional[_Loc]:
    """Value location inside an any block, None while unbound."""
    n = _U32.unpack(store.read(loc.addr, 0, 4))[0]
    if n == 0:
        return None
    aenv = store.any_env(store.read(loc.addr, 4, n))
    return _slot_loc(store, loc.addr, 4 + n, aenv.root, aenv)


def _locate(store: MallocFile, path) -> _Loc:
    env = store.env
    loc = _Loc(store.root_addr, 0, env.unref(env.root), env, None)
    for i in path:
        if isinstance(loc.typ, AnyType):
            loc = _any_value(store, loc)
            if loc is None:
                raise E.UnboundAny("any node without an actual type")
        loc = _child_loc(store, loc, i)
    return loc


def _resize_own(store, loc: _Loc, size: int) -> _Loc:
    """Resize the block a value owns and repoint the slot referring to it."""
    new = store.resize(loc.addr, size)
    if new != loc.addr:
        if loc.slot is None:
            store.set_root(new)
        else:
            store.write(loc.slot[0], loc.slot[1], _U64.pack(new))
        loc = _Loc(new, 0, loc.typ, loc.env, loc.slot)
    return loc


def block_node(store: MallocFile, path: tuple) -> DataImpl:
    loc = _locate(store, path)
    if isinstance(loc.typ, AnyType):
        return BlockAny(store, path, loc)
    return BlockImpl(store, path, loc.typ, loc.env)


class BlockImpl(DataImpl):
    """A value stored in a block file.

    The handle remembers its path from the root and finds the bytes again on
    every access, so it stays valid when blocks move on resize.
    """

    def __init__(self, store: MallocFile, path: tuple, t, env):
        self.store = store
        self.path = path
        self.typ = t
        self.env = env

    @property
    def read_only(self):
        return self.store.readonly

    def loc(self) -> _Loc:
        loc = _locate(self.store, self.path)
        if isinstance(loc.typ, AnyType):
            loc = _any_value(self.store, loc)
            if loc is None:
                raise E.UnboundAny("any node without an actual type")
        return loc

    def _rd(self, off, n, loc=None):
        loc = loc or self.loc()
        return self.store.read(loc.addr, loc.off + off, n)

    def _wr(self, off, raw, loc=None):
        loc = loc or self.loc()
        self.store.write(loc.addr, loc.off + off, raw)

    def _resize_own(self, loc, size) -> _Loc:
        return _resize_own(self.store, loc, size)

    def _child(self, i):
        return block_node(self.store, self.path + (i,))

    # structs / unions
    def n_fields(self):
        if not isinstance(self.typ, Struct):
            self._wrong("n_fields")
        return len(self.typ.fields)

    def get_field(self, i):
        if not isinstance(self.typ, Struct):
            self._wrong("get_field")
        return self._child(i)

    def _fidx(self, i):
        t = self.typ
        if not isinstance(t, Struct):
            self._wrong("field access")
        if isinstance(i, bool) or not isinstance(i, int) or not 0 <= i < len(t.fields):
            raise E.IndexOutOfRange(f"field index {i} out of range 0..{len(t.fields) - 1}")
        return i

    def field_present(self, i):
        i = self._fidx(i)
        t = self.typ
        if t.is_union:
            return self.get_active_field() == i
        if not t.fields[i].optional:
            return True
        return self._rd(_Layout.field_offsets(t, self.env)[i], 1) != b"\0"

    def _optional(self, i):
        i = self._fidx(i)
        if self.typ.is_union or not self.typ.fields[i].optional:
            raise E.NotOptional(f"field {self.typ.fields[i].name!r} is not optional")
        return i

    def set_field_present(self, i):
        i = self._optional(i)
        loc = self.loc()
        off = _Layout.field_offsets(self.typ, self.env)[i]
        if self._rd(off, 1, loc) != b"\0":
            return
        f = self.typ.fields[i]
        lay = _Layout(self.store)
        size = lay.fixed(f.typ, self.env)
        if size is not None:
            self._wr(off + 1, bytes(size), loc)
        else:
            self._wr(off + 1, _U64.pack(lay.create(f.typ, self.env)), loc)
        self._wr(off, b"\1", loc)

    def unset_field(self, i):
        i = self._optional(i)
        loc = self.loc()
        off = _Layout.field_offsets(self.typ, self.env)[i]
        if self._rd(off, 1, loc) == b"\0":
            return
        self._wr(off, b"\0", loc)
        f = self.typ.fields[i]
        lay = _Layout(self.store)
        if lay.fixed(f.typ, self.env) is None:
            child = _U64.unpack(self._rd(off + 1, 8, loc))[0]
            self._wr(off + 1, bytes(8), loc)
            if child:
                lay.free_tree(child, f.typ, self.env)

    def get_active_field(self):
        t = self.typ
        if not isinstance(t, Struct) or not t.is_union:
            self._wrong("get_active_field")
        s = _U16.unpack(self._rd(0, 2))[0]
        if s >= len(t.fields):
            raise E.StoreCorrupt(f"union selector {s} out of range", "layout")
        return s

    def set_active_field(self, i):
        t = self.typ
        if not isinstance(t, Struct) or not t.is_union:
            self._wrong("set_active_field")
        i = self._fidx(i)
        loc = self.loc()
        s = _U16.unpack(self._rd(0, 2, loc))[0]
        if s == i:
            return
        lay = _Layout(self.store)
        env = self.env
        if lay.fixed(t, env) is not None:
            self._wr(0, _U16.pack(i) + bytes(lay.fixed(t.fields[i].typ, env)), loc)
            return
        old = t.fields[s].typ
        if lay.fixed(old, env) is None:
            child = _U64.unpack(self._rd(2, 8, loc))[0]
            if child:
                lay.free_tree(child, old, env)
        new = t.fields[i].typ
        loc = self._resize_own(loc, 2)
        loc = self._resize_own(loc, 2 + lay.slot(new, env))
        lay.fill_slot(loc.addr, 2, new, env)
        self._wr(0, _U16.pack(i), loc)

    # arrays
    def n_elements(self):
        t = self.typ
        if not isinstance(t, Array):
            self._wrong("n_elements")
        if t.size is not FREE:
            return t.size
        return _I32.unpack(self._rd(0, 4))[0]

    def get_elem(self, i):
        if not isinstance(self.typ, Array):
            self._wrong("get_elem")
        return self._child(i)

    def resize(self, n):
        t = self.typ
        if not isinstance(t, Array):
            self._wrong("resize")
        if t.size is not FREE:
            raise E.FixedSize("cannot resize a fixed-size array")
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 0:
            raise E.OutOfRange(f"bad array length {n!r}")
        if n > 2**31 - 1:
            raise E.OutOfRange(f"array length {n} exceeds the 4-byte count")
        n = int(n)
        loc = self.loc()
        cur = _I32.unpack(self._rd(0, 4, loc))[0]
        if n == cur:
            return
        lay = _Layout(self.store)
        slot = lay.slot(t.elem, self.env)
        variable = lay.fixed(t.elem, self.env) is None
        if n < cur and variable:
            for k in range(n, cur):
                child = _U64.unpack(self._rd(4 + 8 * k, 8, loc))[0]
                if child:
                    lay.free_tree(child, t.elem, self.env)
        loc = self._resize_own(loc, 4 + n * slot)
        if n > cur and variable:
            for k in range(cur, n):
                lay.fill_slot(loc.addr, 4 + 8 * k, t.elem, self.env)
        self._wr(0, _I32.pack(n), loc)

    # leaves
    def get_scalar(self):
        t = self.typ
        if not isinstance(t, Num) or t.dims:
            self._wrong("get_scalar")
        raw = self._rd(0, t.kind.width)
        if t.kind is NumKind.F16:
            return raw[::-1]
        return struct.unpack("<" + t.kind.struct_code, raw)[0]

    def assign_scalar(self, v):
        t = self.typ
        if not isinstance(t, Num) or t.dims:
            self._wrong("assign_scalar")
        v = check_scalar(t.kind, v)
        if t.kind is NumKind.F16:
            self._wr(0, v[::-1])
        else:
            self._wr(0, struct.pack("<" + t.kind.struct_code, v))

    def get_string(self):
        t = self.typ
        if not isinstance(t, Str):
            self._wrong("get_string")
        if t.size is not FREE:
            return self._rd(0, t.size)
        loc = self.loc()
        n = _I32.unpack(self._rd(0, 4, loc))[0]
        return self._rd(4, n, loc)

    def assign_string(self, v):
        t = self.typ
        if not isinstance(t, Str):
            self._wrong("assign_string")
        raw = fit_string(t, encode_text(v))
        if t.size is not FREE:
            self._wr(0, raw)
            return
        loc = self._resize_own(self.loc(), 4 + len(raw))
        self._wr(0, _I32.pack(len(raw)) + raw, loc)

    def get_matrix(self):
        t = self.typ
        if not isinstance(t, Num) or not t.dims:
            self._wrong("get_matrix")
        loc = self.loc()
        counts, pos = [], 0
        for d in t.dims:
            if d is FREE:
                counts.append(_I32.unpack(self._rd(pos, 4, loc))[0])
                pos += 4
            else:
                counts.append(d)
        nbytes = int(np.prod(counts, dtype=np.int64)) * t.kind.width
        return MatrixValue.from_bytes(t.kind, counts, self._rd(pos, nbytes, loc), "<")

    def assign_matrix(self, m):
        t = self.typ
        if not isinstance(t, Num) or not t.dims:
            self._wrong("assign_matrix")
        m = to_matrix(t, m)
        prefix = b"".join(_I32.pack(c) for c, d in zip(m.counts, t.dims) if d is FREE)
        body = prefix + m.to_bytes("<")
        loc = self.loc()
        if any(d is FREE for d in t.dims):
            loc = self._resize_own(loc, len(body))
        self._wr(0, body, loc)


class BlockAny(AnyData):
    """An any slot in a block file; binding writes the type text into its block."""

    def __init__(self, store: MallocFile, path: tuple, loc: _Loc):
        super().__init__(loc.env)
        self.store = store
        self.path = path
        vloc = _any_value(store, loc)
        if vloc is not None:
            self.target = BlockImpl(store, path, vloc.typ, vloc.env)

    @property
    def read_only(self):
        return self.store.readonly

    def _own(self) -> _Loc:
        return _locate(self.store, self.path)

    def bind(self, t, env=None):
        if isinstance(t, TypeEnv):
            env, t = t, t.root
        elif env is None:
            env = self.env_outer.with_root(t)
        if env.root is not t:
            env = env.with_root(t)
        if isinstance(env.unref(env.root), AnyType):
            raise E.TypeMismatch("an any node cannot be bound to the any type")
        self.unbind()
        loc = self._own()
        text = print_env(env, indent=None).encode("utf-8")
        lay = _Layout(self.store)
        aenv = self.store.any_env(text)
        slot = lay.slot(aenv.root, aenv)
        loc = _resize_own(self.store, loc, 4 + len(text) + slot)
        self.store.write(loc.addr, 0, _U32.pack(len(text)) + text)
        lay.fill_slot(loc.addr, 4 + len(text), aenv.root, aenv)
        vloc = _any_value(self.store, loc)
        self.target = BlockImpl(self.store, self.path, vloc.typ, vloc.env)

    def unbind(self):
        loc = self._own()
        vloc = _any_value(self.store, loc)
        if vloc is None:
            return
        lay = _Layout(self.store)
        if vloc.slot is not None:
            lay.free_tree(vloc.addr, vloc.typ, vloc.env)
        loc = _resize_own(self.store, loc, 4)
        self.store.write(loc.addr, 0, _U32.pack(0))
        self.target = None


# -- auditing ------------------------------------------------------------------

class LayoutReport:
    def __init__(self):
        self.problems: List[str] = []
        self.inline = 0
        self.own_block = 0

    @property
    def ok(self):
        return not self.problems


def audit_layout(store: MallocFile) -> LayoutReport:
    """Independent walk of the stored tree checking the inlining rule.

    Every fixed-size value must sit inside its parent's block with exactly
    its fixed size; every variable-size value must own a block whose used
    size equals its content; no live block may be unreachable.
    """
    rep = LayoutReport()
    reached = set()
    env = store.env

    def rd(a, off, n):
        return os.pread(store.fd, n, a + HDR + off)

    def content(a, t, env, depth):
        """Check the own-block value of ``t`` at block ``a``; returns nothing."""
        if a in reached:
            rep.problems.append(f"block {a} is referenced twice")
            return
        if a not in store.cap or store.is_free[a]:
            rep.problems.append(f"reference to {a}, which is not a live block")
            return
        reached.add(a)
        rep.own_block += 1
        used = store.used[a]
        t = env.unref(t)
        fixed = _Layout.fixed(t, env)
        if fixed is not None:
            if used != fixed:
                rep.problems.append(f"fixed value in block {a}: {used} bytes, expected {fixed}")
            rep.inline += 1
            return
        if isinstance(t, Num):
            pos, cells = 0, 1
            for d in t.dims:
                if d is FREE:
                    d = _I32.unpack(rd(a, pos, 4))[0]
                    pos += 4
                cells *= d
            need = pos + cells * t.kind.width
        elif isinstance(t, Str):
            need = 4 + _I32.unpack(rd(a, 0, 4))[0]
        elif isinstance(t, AnyType):
            n = _U32.unpack(rd(a, 0, 4))[0]
            need = 4 + n
            if n:
                aenv = parse_type_text(rd(a, 4, n).decode("utf-8"))
                need += slot(a, 4 + n, aenv.root, aenv, depth)
        elif isinstance(t, Struct) and t.is_union:
            s = _U16.unpack(rd(a, 0, 2))[0]
            need = 2 + slot(a, 2, t.fields[s].typ, env, depth)
        elif isinstance(t, Struct):
            need = 0
            for f in t.fields:
                if f.optional:
                    present = rd(a, need, 1) != b"\0"
                    need += 1
                    if not present:
                        need += _Layout.slot(f.typ, env)
                        continue
                need += slot(a, need, f.typ, env, depth)
        else:
            n, need = t.size, 0
            if n is FREE:
                n = _I32.unpack(rd(a, 0, 4))[0]
                need = 4
            for _ in range(n):
                need += slot(a, need, t.elem, env, depth)
        if used != need:
            rep.problems.append(f"variable value in block {a}: {used} bytes used, "
                                f"content needs {need}")

    def slot(a, off, t, env, depth):
        t = env.unref(t)
        fixed = _Layout.fixed(t, env)
        if fixed is not None:
            rep.inline += 1
            return fixed
        child = _U64.unpack(rd(a, off, 8))[0]
        if child == 0:
            rep.problems.append(f"null address for a present value at {a}+{off}")
        else:
            content(child, t, env, depth + 1)
        return 8

    if store.root_addr:
        content(store.root_addr, env.root, env, 0)
    if store.type_addr:
        reached.add(store.type_addr)
    orphans = [a for a in store.live_blocks() if a not in reached]
    if orphans:
        rep.problems.append(f"unreachable live blocks: {orphans[:5]}")
    return rep
