"""The uniform data layer.

Applications hold :class:`DataHandle` objects.  A handle points at a
:class:`DataImpl`, which each storage representation subclasses: the
in-memory tree defined here, the lazy binary-file reader, the block store.
Copying a handle aliases the underlying node; deep copies go through
:func:`copy_into`.

Example::

    D = new_direct(parse_type_text(typetext))
    D["comment"] = "blubb blubb"
    atoms = D["atoms"]
    atoms.resize(10)
    atoms[0]["z"] = 12
"""
from __future__ import annotations

import re
import struct
from typing import Iterator, List, Optional, Union

import numpy as np

from . import errors as E
from .matrix import MatrixValue, MatrixShape, f16_to_float_checked, float_to_f16
from .types import (ANY, FREE, NIL, AnyType, Array, Num, NumKind, Str, Struct, TypeEnv,
                    TypeNode, print_type, type_equals)

Key = Union[str, int]


class DataImpl:
    """Behaviour behind a handle.  Inapplicable operations raise WrongType."""

    typ: TypeNode
    env: TypeEnv
    read_only = False
    is_any = False
    via_any = False     # a resolved any slot (lazy reader); env holds the bound type

    def _wrong(self, op):
        raise E.WrongType(f"{op}() is not applicable to {_tname(self.typ)}")

    # structs and unions
    def n_fields(self) -> int:
        self._wrong("n_fields")

    def get_field(self, i: int) -> "DataImpl":
        self._wrong("get_field")

    def field_present(self, i: int) -> bool:
        self._wrong("field_present")

    def set_field_present(self, i: int) -> None:
        self._wrong("set_field_present")

    def unset_field(self, i: int) -> None:
        self._wrong("unset_field")

    def get_active_field(self) -> int:
        self._wrong("get_active_field")

    def set_active_field(self, i: int) -> None:
        self._wrong("set_active_field")

    # arrays
    def n_elements(self) -> int:
        self._wrong("n_elements")

    def get_elem(self, i: int) -> "DataImpl":
        self._wrong("get_elem")

    def resize(self, n: int) -> None:
        self._wrong("resize")

    # elementary data
    def get_scalar(self):
        """Scalar as int, float, or 16 big-endian bytes for real*16."""
        self._wrong("get_scalar")

    def assign_scalar(self, v) -> None:
        self._wrong("assign_scalar")

    def get_string(self) -> bytes:
        self._wrong("get_string")

    def assign_string(self, v: bytes) -> None:
        self._wrong("assign_string")

    def get_matrix(self) -> MatrixValue:
        self._wrong("get_matrix")

    def assign_matrix(self, m: MatrixValue) -> None:
        self._wrong("assign_matrix")

    # typed scalar access, built on get_scalar/assign_scalar
    def get_int(self) -> int:
        t = self.typ
        if not isinstance(t, Num) or t.dims or t.kind.is_float:
            self._wrong("get_int")
        v = self.get_scalar()
        if v > (1 << 63) - 1:
            raise E.LossyRead(f"value {v} does not fit a signed 64-bit integer")
        return v

    def get_double(self) -> float:
        t = self.typ
        if not isinstance(t, Num) or t.dims:
            self._wrong("get_double")
        v = self.get_scalar()
        if t.kind is NumKind.F16:
            return f16_to_float_checked(v)
        return float(v)

    def assign_int(self, v: int) -> None:
        t = self.typ
        if not isinstance(t, Num) or t.dims:
            self._wrong("assign_int")
        if t.kind.is_float:
            self.assign_double(float(v))
            return
        self.assign_scalar(check_int(t.kind, v))

    def assign_double(self, v: float) -> None:
        t = self.typ
        if not isinstance(t, Num) or t.dims or not t.kind.is_float:
            self._wrong("assign_double")
        self.assign_scalar(float_scalar(t.kind, v))

    # any
    def actualize_type(self, t, env=None) -> None:
        raise E.NotAnyType(f"actualize_type() needs an any node, not {_tname(self.typ)}")


def _tname(t):
    if t is NIL:
        return "nil"
    try:
        return print_type(t)
    except E.StructFileError:
        return repr(t)


def check_int(kind: NumKind, v) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
        raise E.WrongType(f"expected an integer, got {type(v).__name__}")
    v = int(v)
    if not kind.min_value <= v <= kind.max_value:
        raise E.OutOfRange(f"{v} does not fit {kind.value}")
    return v


def float_scalar(kind: NumKind, v):
    """Normalize a float to the storage representation of ``kind``."""
    v = float(v)
    if kind is NumKind.F4:
        try:
            return struct.unpack("<f", struct.pack("<f", v))[0]
        except OverflowError:
            raise E.OutOfRange(f"{v} does not fit real*4") from None
    if kind is NumKind.F16:
        return float_to_f16(v)
    return v


def check_scalar(kind: NumKind, v):
    """Validate a value in get_scalar() representation for ``kind``."""
    if kind is NumKind.F16:
        if isinstance(v, (bytes, bytearray)) and len(v) == 16:
            return bytes(v)
        return float_to_f16(v)
    if kind.is_float:
        return float_scalar(kind, v)
    return check_int(kind, v)


def encode_text(v) -> bytes:
    if isinstance(v, str):
        return v.encode("utf-8")
    if isinstance(v, (bytes, bytearray, memoryview)):
        return bytes(v)
    raise E.WrongType(f"expected str or bytes, got {type(v).__name__}")


def fit_string(t: Str, b: bytes) -> bytes:
    if t.size is FREE:
        return b
    if len(b) > t.size:
        raise E.StringTooLong(f"{len(b)} bytes do not fit string*{t.size}")
    return b + bytes(t.size - len(b))


def to_matrix(t: Num, m) -> MatrixValue:
    """Check a matrix against a declared matrix type (kind, rank, fixed dims)."""
    if not isinstance(m, MatrixValue):
        m = MatrixValue.from_array(t.kind, np.asarray(m))
        if m.shape.rank != t.rank:
            m = MatrixValue(t.kind, MatrixShape.from_counts(
                np.asarray(m.cells).shape if t.rank == 1 else m.counts), m.cells)
    if m.kind is not t.kind:
        raise E.WrongType(f"matrix of {m.kind.value} assigned to {print_type(t)}")
    counts = m.counts
    if len(counts) != t.rank:
        raise E.ShapeMismatch(f"rank {len(counts)} matrix assigned to {print_type(t)}")
    for c, d in zip(counts, t.dims):
        if d is not FREE and c != d:
            raise E.ShapeMismatch(f"shape {counts} does not match {print_type(t)}")
    return m


def default_matrix(t: Num) -> MatrixValue:
    return MatrixValue.zeros(t.kind, [0 if d is FREE else d for d in t.dims])


def default_string(t: Str) -> bytes:
    return b"" if t.size is FREE else bytes(t.size)


def default_scalar(kind: NumKind):
    if kind is NumKind.F16:
        return bytes(16)
    return 0.0 if kind.is_float else 0


# -- in-memory tree ----------------------------------------------------------

class DirectData(DataImpl):
    __slots__ = ("typ", "env")

    def __init__(self, t, env):
        self.typ = t
        self.env = env


class DirectNum(DirectData):
    __slots__ = ("value",)

    def __init__(self, t, env):
        super().__init__(t, env)
        self.value = default_scalar(t.kind)

    def get_scalar(self):
        return self.value

    def assign_scalar(self, v):
        self.value = check_scalar(self.typ.kind, v)


class DirectMatrix(DirectData):
    __slots__ = ("value",)

    def __init__(self, t, env):
        super().__init__(t, env)
        self.value = default_matrix(t)

    def get_matrix(self):
        return self.value.copy()

    def assign_matrix(self, m):
        self.value = to_matrix(self.typ, m).copy()


class DirectString(DirectData):
    __slots__ = ("value",)

    def __init__(self, t, env):
        super().__init__(t, env)
        self.value = default_string(t)

    def get_string(self):
        return self.value

    def assign_string(self, v):
        self.value = fit_string(self.typ, encode_text(v))


def _check_index(i, n, what):
    if isinstance(i, bool) or not isinstance(i, (int, np.integer)) or not 0 <= i < n:
        raise E.IndexOutOfRange(f"{what} index {i} out of range 0..{n - 1}")
    return int(i)


class DirectStruct(DirectData):
    __slots__ = ("members",)

    def __init__(self, t, env):
        super().__init__(t, env)
        self.members = [None if f.optional else make_direct(f.typ, env) for f in t.fields]

    def n_fields(self):
        return len(self.members)

    def get_field(self, i):
        i = _check_index(i, len(self.members), "field")
        m = self.members[i]
        if m is None:
            raise E.FieldNotPresent(f"optional field {self.typ.fields[i].name!r} is not present")
        return m

    def field_present(self, i):
        i = _check_index(i, len(self.members), "field")
        return self.members[i] is not None

    def _optional(self, i):
        i = _check_index(i, len(self.members), "field")
        if not self.typ.fields[i].optional:
            raise E.NotOptional(f"field {self.typ.fields[i].name!r} is not optional")
        return i

    def set_field_present(self, i):
        i = self._optional(i)
        if self.members[i] is None:
            self.members[i] = make_direct(self.typ.fields[i].typ, self.env)

    def unset_field(self, i):
        i = self._optional(i)
        self.members[i] = None


class DirectUnion(DirectData):
    __slots__ = ("active", "value")

    def __init__(self, t, env):
        super().__init__(t, env)
        self.active = 0
        self.value = make_direct(t.fields[0].typ, env)

    def n_fields(self):
        return len(self.typ.fields)

    def get_field(self, i):
        i = _check_index(i, len(self.typ.fields), "field")
        if i != self.active:
            raise E.InactiveUnionField(
                f"union field {self.typ.fields[i].name!r} is not the active one "
                f"({self.typ.fields[self.active].name!r})")
        return self.value

    def field_present(self, i):
        return _check_index(i, len(self.typ.fields), "field") == self.active

    def get_active_field(self):
        return self.active

    def set_active_field(self, i):
        i = _check_index(i, len(self.typ.fields), "field")
        if i != self.active:
            self.value = make_direct(self.typ.fields[i].typ, self.env)
            self.active = i


class DirectArray(DirectData):
    __slots__ = ("elems",)

    def __init__(self, t, env):
        super().__init__(t, env)
        n = 0 if t.size is FREE else t.size
        self.elems = [make_direct(t.elem, env) for _ in range(n)]

    def n_elements(self):
        return len(self.elems)

    def get_elem(self, i):
        return self.elems[_check_index(i, len(self.elems), "element")]

    def resize(self, n):
        if self.typ.size is not FREE:
            raise E.FixedSize(f"cannot resize {print_type(self.typ)}")
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 0:
            raise E.OutOfRange(f"bad array length {n!r}")
        n = int(n)
        cur = len(self.elems)
        if n < cur:
            del self.elems[n:]
        else:
            self.elems.extend(make_direct(self.typ.elem, self.env) for _ in range(n - cur))


_FORWARDED = ("n_fields", "get_field", "field_present", "set_field_present", "unset_field",
              "get_active_field", "set_active_field", "n_elements", "get_elem", "resize",
              "get_scalar", "assign_scalar", "get_string", "assign_string", "get_matrix",
              "assign_matrix", "get_int", "get_double", "assign_int", "assign_double")


class AnyData(DataImpl):
    """An ``any`` slot.  Unbound it refuses every read and write; once
    :meth:`actualize_type` has run, every operation forwards to the target.
    """

    is_any = True

    def __init__(self, env, factory=None):
        self.env_outer = env
        self.target: Optional[DataImpl] = None
        self._factory = factory or make_direct

    @property
    def typ(self):
        return ANY if self.target is None else self.target.typ

    @property
    def env(self):
        return self.env_outer if self.target is None else self.target.env

    @property
    def read_only(self):
        return self.target is not None and self.target.read_only

    def actualize_type(self, t, env=None):
        if self.target is not None:
            raise E.AlreadyBound("any node already has an actual type")
        self.bind(t, env)

    def bind(self, t, env=None):
        """Replace the binding with a fresh default value of type ``t``."""
        if isinstance(t, TypeEnv):
            env, t = t, t.root
        elif env is None:
            env = self.env_outer.with_root(t)
        t = env.unref(t)
        if isinstance(t, AnyType):
            raise E.TypeMismatch("an any node cannot be bound to the any type")
        self.target = self._factory(t, env)

    def unbind(self):
        self.target = None


def _forwarder(name):
    def method(self, *args):
        if self.target is None:
            raise E.UnboundAny(f"{name}() on an any node without an actual type")
        return getattr(self.target, name)(*args)
    method.__name__ = name
    return method


for _name in _FORWARDED:
    setattr(AnyData, _name, _forwarder(_name))
del _name


class Committed(DataImpl):
    """Placeholder for a subtree already streamed to disk and released."""

    __slots__ = ("typ", "env")

    def __init__(self, t, env):
        self.typ = t
        self.env = env

    def _wrong(self, op):
        raise E.WriteOnlySession(f"{op}(): data was committed to disk and released")

    def actualize_type(self, t, env=None):
        self._wrong("actualize_type")


def make_direct(t: TypeNode, env: TypeEnv) -> DataImpl:
    t = env.unref(t)
    if isinstance(t, Num):
        return DirectMatrix(t, env) if t.dims else DirectNum(t, env)
    if isinstance(t, Str):
        return DirectString(t, env)
    if isinstance(t, Struct):
        return DirectUnion(t, env) if t.is_union else DirectStruct(t, env)
    if isinstance(t, Array):
        return DirectArray(t, env)
    if isinstance(t, AnyType):
        return AnyData(env)
    raise E.ValidationError(f"not a type node: {t!r}")


# -- handles -----------------------------------------------------------------

class DataHandle:
    """Reference to a data object of any representation.

    Structs are indexed by field name (or position), arrays by position::

        h["atoms"][3]["z"] = 12
        h["atoms"][3]["z"].get_int()
    """

    __slots__ = ("_impl",)

    def __init__(self, impl: Optional[DataImpl] = None):
        self._impl = impl

    @property
    def impl(self) -> DataImpl:
        if self._impl is None:
            raise E.NullHandle("operation on a null handle")
        return self._impl

    @property
    def is_null(self) -> bool:
        return self._impl is None

    @property
    def typ(self) -> TypeNode:
        return NIL if self._impl is None else self._impl.typ

    @property
    def env(self) -> TypeEnv:
        return self.impl.env

    @property
    def read_only(self) -> bool:
        return self.impl.read_only

    def type_p(self, kind: str) -> bool:
        """Test the kind of data: nil, num, matrix, string, struct, union, array, any."""
        t = self.typ
        return {
            "nil": t is NIL,
            "num": isinstance(t, Num),
            "matrix": isinstance(t, Num) and bool(t.dims),
            "string": isinstance(t, Str),
            "struct": isinstance(t, Struct) and not t.is_union,
            "union": isinstance(t, Struct) and t.is_union,
            "array": isinstance(t, Array),
            "any": isinstance(t, AnyType),
        }[kind]

    def __repr__(self):
        if self._impl is None:
            return "DataHandle(null)"
        return f"DataHandle({_tname(self._impl.typ)})"

    # structs ---------------------------------------------------------------
    def _struct(self) -> Struct:
        t = self.impl.typ
        if not isinstance(t, Struct):
            if isinstance(t, AnyType):
                raise E.UnboundAny("field access on an any node without an actual type")
            raise E.WrongType(f"field access on {_tname(t)}")
        return t

    def _field_index(self, name) -> int:
        t = self._struct()
        if isinstance(name, str):
            i = t.field_index(name)
            if i is None:
                raise E.NoSuchField(f"no field named {name!r}")
            return i
        return _check_index(name, len(t.fields), "field")

    def n_fields(self) -> int:
        return self.impl.n_fields()

    def field_name(self, i: int) -> str:
        t = self._struct()
        return t.fields[_check_index(i, len(t.fields), "field")].name

    def field_names(self) -> List[str]:
        t = self._struct()
        return [f.name for f in t.fields]

    def get_field(self, name: Key) -> "DataHandle":
        return DataHandle(self.impl.get_field(self._field_index(name)))

    def get_field_by_index(self, i: int) -> "DataHandle":
        return DataHandle(self.impl.get_field(self._field_index(int(i) if not isinstance(i, str) else i)))

    def field_present(self, name: Key) -> bool:
        return self.impl.field_present(self._field_index(name))

    def set_field_present(self, name: Key) -> "DataHandle":
        i = self._field_index(name)
        self.impl.set_field_present(i)
        return DataHandle(self.impl.get_field(i))

    def unset_field(self, name: Key) -> None:
        self.impl.unset_field(self._field_index(name))

    def get_active_field(self) -> int:
        return self.impl.get_active_field()

    def active_field_name(self) -> str:
        return self.field_name(self.get_active_field())

    def set_active_field(self, name: Key) -> "DataHandle":
        i = self._field_index(name)
        self.impl.set_active_field(i)
        return DataHandle(self.impl.get_field(i))

    # arrays ----------------------------------------------------------------
    def n_elements(self) -> int:
        return self.impl.n_elements()

    def get_elem(self, i: int) -> "DataHandle":
        return DataHandle(self.impl.get_elem(i))

    def resize(self, n: int) -> None:
        self.impl.resize(n)

    def __getitem__(self, key: Key) -> "DataHandle":
        if isinstance(key, str):
            return self.get_field(key)
        if isinstance(self.impl.typ, Struct):
            return self.get_field_by_index(key)
        return self.get_elem(key)

    def __setitem__(self, key: Key, value) -> None:
        self[key].assign(value)

    def __iter__(self) -> Iterator["DataHandle"]:
        t = self.impl.typ
        if isinstance(t, Array):
            return (self.get_elem(i) for i in range(self.n_elements()))
        raise E.WrongType(f"cannot iterate over {_tname(t)}")

    # elementary data -------------------------------------------------------
    def get_int(self) -> int:
        return self.impl.get_int()

    def get_double(self) -> float:
        return self.impl.get_double()

    def get_string(self) -> bytes:
        return self.impl.get_string()

    def get_text(self, encoding: str = "utf-8") -> str:
        """String contents decoded, trailing NUL padding removed."""
        return self.impl.get_string().rstrip(b"\0").decode(encoding)

    def get_matrix(self) -> MatrixValue:
        return self.impl.get_matrix()

    def get_scalar(self):
        return self.impl.get_scalar()

    def assign_int(self, v: int) -> None:
        self.impl.assign_int(v)

    def assign_double(self, v: float) -> None:
        self.impl.assign_double(v)

    def assign_string(self, v) -> None:
        self.impl.assign_string(v)

    def assign_matrix(self, m) -> None:
        self.impl.assign_matrix(m)

    def assign(self, v) -> None:
        """Assign a Python value, choosing the operation by its type."""
        if isinstance(v, DataHandle):
            copy_into(self, v)
        elif isinstance(v, bool):
            raise E.WrongType("booleans have no data type")
        elif isinstance(v, (int, np.integer)):
            self.assign_int(v)
        elif isinstance(v, (float, np.floating)):
            self.assign_double(v)
        elif isinstance(v, (str, bytes, bytearray)):
            self.assign_string(v)
        elif isinstance(v, (MatrixValue, np.ndarray)):
            self.assign_matrix(v)
        else:
            raise E.WrongType(f"cannot assign a {type(v).__name__}")

    def copy_from(self, src: "DataHandle") -> None:
        copy_into(self, src)

    # any -------------------------------------------------------------------
    def actualize_type(self, t, env: Optional[TypeEnv] = None) -> "DataHandle":
        if isinstance(t, str):
            from .ddl import parse_type_text
            t = parse_type_text(t)
        self.impl.actualize_type(t, env)
        return self


def new_direct(t, env: Optional[TypeEnv] = None) -> DataHandle:
    """A fresh in-memory data object of type ``t`` (or of ``env.root``)."""
    if isinstance(t, TypeEnv):
        env, t = t, t.root
    elif env is None:
        env = TypeEnv(t)
    return DataHandle(make_direct(t, env))


# -- deep copy and comparison ------------------------------------------------

MAX_NESTING = 200


def copy_into(dst: DataHandle, src: DataHandle) -> None:
    """Deep copy of ``src``'s value into ``dst``; the types must be equal."""
    d, s = dst.impl, src.impl
    if d is s:
        return
    if not d.is_any and not type_equals(d.typ, s.typ, d.env, s.env):
        raise E.TypeMismatch(f"cannot copy {_tname(s.typ)} into {_tname(d.typ)}")
    if d.read_only:
        raise E.ReadOnly("destination is read-only")
    _copy(d, s, 0)


def _copy(d, s, depth):
    if depth > MAX_NESTING:
        raise E.TooDeep(f"data nested deeper than {MAX_NESTING} levels")
    if d.is_any:
        if isinstance(s.typ, AnyType):
            d.unbind()
            return
        if s.via_any:
            d.bind(s.env)
        else:
            d.bind(s.typ, s.env)
        d = d.target
    t = d.typ
    if isinstance(t, Num):
        if t.dims:
            d.assign_matrix(s.get_matrix())
        else:
            d.assign_scalar(s.get_scalar())
    elif isinstance(t, Str):
        d.assign_string(s.get_string())
    elif isinstance(t, Struct):
        if t.is_union:
            a = s.get_active_field()
            d.set_active_field(a)
            _copy(d.get_field(a), s.get_field(a), depth + 1)
        else:
            for i, f in enumerate(t.fields):
                if f.optional:
                    if not s.field_present(i):
                        d.unset_field(i)
                        continue
                    d.set_field_present(i)
                _copy(d.get_field(i), s.get_field(i), depth + 1)
    elif isinstance(t, Array):
        n = s.n_elements()
        if t.size is FREE:
            d.resize(n)
        for i in range(n):
            _copy(d.get_elem(i), s.get_elem(i), depth + 1)


def _same_float(a, b):
    return struct.pack("<d", a) == struct.pack("<d", b)


def data_equal(a: DataHandle, b: DataHandle) -> bool:
    """Structural value equality (types, presence, selections, values)."""
    return _eq(a.impl, b.impl)


def _eq(a, b):
    ta, tb = a.typ, b.typ
    if isinstance(ta, AnyType) or isinstance(tb, AnyType):
        return isinstance(ta, AnyType) and isinstance(tb, AnyType)
    if not type_equals(ta, tb, a.env, b.env):
        return False
    if isinstance(ta, Num):
        if ta.dims:
            return a.get_matrix() == b.get_matrix()
        va, vb = a.get_scalar(), b.get_scalar()
        if isinstance(va, float):
            return _same_float(va, vb)
        return va == vb
    if isinstance(ta, Str):
        return a.get_string() == b.get_string()
    if isinstance(ta, Struct):
        if ta.is_union:
            i = a.get_active_field()
            return i == b.get_active_field() and _eq(a.get_field(i), b.get_field(i))
        for i, f in enumerate(ta.fields):
            if f.optional:
                pa, pb = a.field_present(i), b.field_present(i)
                if pa != pb:
                    return False
                if not pa:
                    continue
            if not _eq(a.get_field(i), b.get_field(i)):
                return False
        return True
    if isinstance(ta, Array):
        n = a.n_elements()
        if n != b.n_elements():
            return False
        return all(_eq(a.get_elem(i), b.get_elem(i)) for i in range(n))
    return False


def to_python(h: DataHandle):
    """Plain Python rendering: dicts, lists, numbers, bytes, numpy arrays.

    Unions become a one-entry dict ``{variant: value}``; absent optional
    fields are omitted.
    """
    return _py(h.impl)


def _py(d):
    t = d.typ
    if isinstance(t, Num):
        return d.get_matrix().as_array() if t.dims else d.get_scalar()
    if isinstance(t, Str):
        return d.get_string()
    if isinstance(t, Struct):
        if t.is_union:
            i = d.get_active_field()
            return {t.fields[i].name: _py(d.get_field(i))}
        return {f.name: _py(d.get_field(i)) for i, f in enumerate(t.fields)
                if not f.optional or d.field_present(i)}
    if isinstance(t, Array):
        return [_py(d.get_elem(i)) for i in range(d.n_elements())]
    raise E.UnboundAny("any node without an actual type")


def count_nodes(h: DataHandle) -> int:
    """Number of live in-memory nodes reachable from ``h``."""
    n = 0
    stack = [h.impl]
    while stack:
        d = stack.pop()
        if isinstance(d, AnyData):
            if d.target is not None:
                stack.append(d.target)
            n += 1
            continue
        if not isinstance(d, DirectData):
            continue
        n += 1
        if isinstance(d, DirectStruct):
            stack.extend(m for m in d.members if m is not None)
        elif isinstance(d, DirectUnion):
            stack.append(d.value)
        elif isinstance(d, DirectArray):
            stack.extend(d.elems)
    return n


# -- paths -------------------------------------------------------------------

_PATH_TOKEN = re.compile(r"\s*(?:([A-Za-z_][A-Za-z0-9_]*)|\[\s*(\d+)\s*\]|(\.))")


def parse_path(path: str) -> List[Key]:
    """``"atoms[0].name"`` -> ``["atoms", 0, "name"]``."""
    steps: List[Key] = []
    pos, n = 0, len(path)
    need_name = False
    while pos < n:
        if path[pos:].strip() == "":
            break
        m = _PATH_TOKEN.match(path, pos)
        if not m:
            raise E.PathSyntax(f"bad path {path!r} at position {pos}")
        name, index, dot = m.groups()
        if dot:
            if need_name or not steps:
                raise E.PathSyntax(f"bad path {path!r} at position {pos}")
            need_name = True
        elif name is not None:
            if steps and not need_name:
                raise E.PathSyntax(f"missing '.' before {name!r} in {path!r}")
            steps.append(name)
            need_name = False
        else:
            if need_name:
                raise E.PathSyntax(f"bad path {path!r} at position {pos}")
            steps.append(int(index))
        pos = m.end()
    if need_name:
        raise E.PathSyntax(f"path {path!r} ends with '.'")
    return steps


def path_get(root: DataHandle, path: Union[str, List[Key]]) -> DataHandle:
    steps = parse_path(path) if isinstance(path, str) else path
    h = root
    for step in steps:
        if isinstance(step, str):
            h = h.get_field(step)
        else:
            t = h.typ
            h = h.get_field_by_index(step) if isinstance(t, Struct) else h.get_elem(step)
    return h


# -- depth traversal ---------------------------------------------------------

def child_indices(d: DataImpl) -> List[int]:
    """Children of a node in serialization order (field/element indices)."""
    t = d.typ
    if isinstance(t, Struct):
        if t.is_union:
            return [d.get_active_field()]
        return [i for i, f in enumerate(t.fields) if not f.optional or d.field_present(i)]
    if isinstance(t, Array):
        return list(range(d.n_elements()))
    return []


def is_composite(t: TypeNode) -> bool:
    return isinstance(t, (Struct, Array))


class TreeCursor:
    """Walks a data tree level by level in serialization order.

    ``next()`` moves to the next sibling; past the last one :attr:`at_end`
    becomes true and only ``up()`` is legal.  ``down()`` enters a composite.
    """

    def __init__(self, root: DataHandle):
        self._root = root.impl
        # each level: [parent impl or None, position among children]
        self._levels: List[list] = [[None, 0]]

    def _children(self, level):
        parent = level[0]
        return [0] if parent is None else child_indices(parent)

    @property
    def depth(self) -> int:
        return len(self._levels) - 1

    @property
    def at_end(self) -> bool:
        level = self._levels[-1]
        return level[1] >= len(self._children(level))

    @property
    def index(self) -> int:
        """Field/element index of the current item within its parent."""
        level = self._levels[-1]
        kids = self._children(level)
        if level[1] >= len(kids):
            raise E.AtEnd("cursor is past the last item of this level")
        return kids[level[1]]

    @property
    def path(self) -> tuple:
        """Child indices from the root to the current position.

        At the end of a level the last entry is one past the last child.
        """
        out = []
        for level in self._levels[1:]:
            kids = self._children(level)
            if level[1] < len(kids):
                out.append(kids[level[1]])
            else:
                out.append(kids[-1] + 1 if kids else 0)
        return tuple(out)

    def _impl_at(self, level):
        parent = level[0]
        if parent is None:
            return self._root
        i = self._children(level)[level[1]]
        return parent.get_elem(i) if isinstance(parent.typ, Array) else parent.get_field(i)

    def current_impl(self) -> DataImpl:
        if self.at_end:
            raise E.AtEnd("cursor is past the last item of this level")
        return self._impl_at(self._levels[-1])

    @property
    def current(self) -> DataHandle:
        return DataHandle(self.current_impl())

    def next(self) -> bool:
        """Advance to the next sibling; returns False once past the end."""
        if self.at_end:
            raise E.AtEnd("cursor is already past the last item")
        self._levels[-1][1] += 1
        return not self.at_end

    def has_subs(self) -> bool:
        if self.at_end:
            return False
        return is_composite(self.current_impl().typ)

    def down(self) -> None:
        if not self.has_subs():
            raise E.NoChildren("current item has no members")
        self._levels.append([self.current_impl(), 0])

    def up(self) -> None:
        if len(self._levels) == 1:
            raise E.AtRoot("cursor is at the root level")
        self._levels.pop()

    def walk(self) -> Iterator[tuple]:
        """Yield ``(path, handle)`` for every node in serialization order."""
        while True:
            if self.at_end:
                if self.depth == 0:
                    return
                self.up()
                self.next()
                continue
            yield self.path, self.current
            if self.has_subs():
                self.down()
            else:
                self.next()


def cursor_next(c: TreeCursor) -> bool:
    return c.next()


def cursor_down(c: TreeCursor) -> None:
    c.down()


def cursor_up(c: TreeCursor) -> None:
    c.up()


def cursor_has_subs(c: TreeCursor) -> bool:
    return c.has_subs()
