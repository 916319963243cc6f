"""Type trees: elementary and composite types, typedef environments, sizes.

A type tree is built from immutable nodes (:class:`Num`, :class:`Str`,
:class:`Struct`, :class:`Array`, :class:`NamedRef`, :class:`AnyType`).  Free
dimensions and sizes are represented by ``None`` (:data:`FREE`).
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional, Tuple, Union

from .errors import UnknownTypeName, ValidationError, VariableSize

FREE = None

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

KEYWORDS = frozenset({
    "struct", "union", "array", "of", "optional", "typedef", "type", "any",
    "string", "opaque", "integer", "real", "unsigned",
})


class NumKind(enum.Enum):
    I1 = "i1"
    U1 = "u1"
    I2 = "i2"
    U2 = "u2"
    I4 = "i4"
    U4 = "u4"
    I8 = "i8"
    U8 = "u8"
    F4 = "f4"
    F8 = "f8"
    F16 = "f16"

    @property
    def width(self) -> int:
        return int(self.value[1:])

    @property
    def is_float(self) -> bool:
        return self.value[0] == "f"

    @property
    def signed(self) -> Optional[bool]:
        if self.is_float:
            return None
        return self.value[0] == "i"

    @property
    def min_value(self) -> int:
        return -(1 << (8 * self.width - 1)) if self.signed else 0

    @property
    def max_value(self) -> int:
        bits = 8 * self.width
        return (1 << (bits - 1)) - 1 if self.signed else (1 << bits) - 1

    @property
    def struct_code(self) -> Optional[str]:
        """``struct`` format letter, or None for f16 (raw 16 bytes)."""
        return _STRUCT_CODES.get(self)

    @classmethod
    def integer(cls, width: int, signed: bool = True) -> "NumKind":
        return cls(("i" if signed else "u") + str(width))

    @classmethod
    def real(cls, width: int) -> "NumKind":
        return cls("f" + str(width))


_STRUCT_CODES = {
    NumKind.I1: "b", NumKind.U1: "B", NumKind.I2: "h", NumKind.U2: "H",
    NumKind.I4: "i", NumKind.U4: "I", NumKind.I8: "q", NumKind.U8: "Q",
    NumKind.F4: "f", NumKind.F8: "d",
}

INTEGER_WIDTHS = (1, 2, 4, 8)
REAL_WIDTHS = (4, 8, 16)


@dataclass(frozen=True)
class Num:
    kind: NumKind
    dims: Tuple[Optional[int], ...] = ()

    @property
    def rank(self) -> int:
        return len(self.dims)


@dataclass(frozen=True)
class Str:
    opaque: bool = False
    size: Optional[int] = FREE


@dataclass(frozen=True)
class Field:
    name: str
    typ: "TypeNode"
    optional: bool = False


@dataclass(frozen=True)
class Struct:
    fields: Tuple[Field, ...] = ()
    is_union: bool = False
    _index: Dict[str, int] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        object.__setattr__(self, "_index", {f.name: i for i, f in enumerate(self.fields)})

    def field_index(self, name: str) -> Optional[int]:
        return self._index.get(name)


@dataclass(frozen=True)
class Array:
    elem: "TypeNode"
    size: Optional[int] = FREE


@dataclass(frozen=True)
class NamedRef:
    name: str


@dataclass(frozen=True)
class AnyType:
    pass


@dataclass(frozen=True)
class NilType:
    """Type reported by a null handle; has no textual syntax."""


TypeNode = Union[Num, Str, Struct, Array, NamedRef, AnyType]

ANY = AnyType()
NIL = NilType()


def union(*fields: Field) -> Struct:
    return Struct(tuple(fields), is_union=True)


class TypeEnv:
    """A root type together with the typedef table it may reference.

    Construction validates the whole tree: names resolve, field names are
    unique, unions are well formed and recursion can always terminate.
    """

    def __init__(self, root: TypeNode, typedefs: Optional[Dict[str, TypeNode]] = None):
        self.root = root
        self.typedefs: Dict[str, TypeNode] = dict(typedefs or {})
        self._layout: Dict[int, tuple] = {}
        _validate_env(self)

    def __eq__(self, other):
        if not isinstance(other, TypeEnv):
            return NotImplemented
        return self.root == other.root and self.typedefs == other.typedefs

    def __repr__(self):
        return f"TypeEnv(root={self.root!r}, typedefs={self.typedefs!r})"

    def resolve(self, name: str) -> TypeNode:
        try:
            return self.typedefs[name]
        except KeyError:
            raise UnknownTypeName(f"unknown type name {name!r}") from None

    def unref(self, t: TypeNode) -> TypeNode:
        """Follow NamedRefs until a structural node is reached."""
        seen = set()
        while isinstance(t, NamedRef):
            if t.name in seen:
                raise ValidationError(f"type {t.name!r} is defined only in terms of itself")
            seen.add(t.name)
            t = self.resolve(t.name)
        return t

    def with_root(self, t: TypeNode) -> "TypeEnv":
        """An env rooted at ``t`` keeping only the typedefs ``t`` reaches."""
        names = _reachable_names(t, self)
        return TypeEnv(t, {n: self.typedefs[n] for n in self.typedefs if n in names})

    def layout(self, t: TypeNode) -> Tuple[bool, int]:
        """``(variable, size)``; size is meaningful only when not variable."""
        hit = self._layout.get(id(t))
        if hit is not None and hit[0] is t:
            return hit[1], hit[2]
        variable, size = _layout(t, self, set())
        self._layout[id(t)] = (t, variable, size)
        return variable, size

    def is_variable_size(self, t: TypeNode) -> bool:
        return self.layout(t)[0]

    def fixed_byte_size(self, t: TypeNode) -> int:
        variable, size = self.layout(t)
        if variable:
            raise VariableSize(f"type {print_type(t)} has no fixed encoded size")
        return size


def resolve(name: str, env: TypeEnv) -> TypeNode:
    return env.resolve(name)


def is_variable_size(t: TypeNode, env: Optional[TypeEnv] = None) -> bool:
    return (env or TypeEnv(t)).is_variable_size(t)


def fixed_byte_size(t: TypeNode, env: Optional[TypeEnv] = None) -> int:
    return (env or TypeEnv(t)).fixed_byte_size(t)


def _layout(t, env, visiting):
    if isinstance(t, NamedRef):
        if t.name in visiting:
            return True, 0
        visiting.add(t.name)
        try:
            return _layout(env.resolve(t.name), env, visiting)
        finally:
            visiting.discard(t.name)
    if isinstance(t, Num):
        if any(d is FREE for d in t.dims):
            return True, 0
        n = t.kind.width
        for d in t.dims:
            n *= d
        return False, n
    if isinstance(t, Str):
        return (True, 0) if t.size is FREE else (False, t.size)
    if isinstance(t, Array):
        if t.size is FREE:
            return True, 0
        variable, size = _layout(t.elem, env, visiting)
        return variable, size * t.size
    if isinstance(t, Struct):
        sizes = []
        any_variable = False
        for f in t.fields:
            variable, size = _layout(f.typ, env, visiting)
            if variable or f.optional:
                any_variable = True
            sizes.append(size)
        if t.is_union:
            if any_variable or len(set(sizes)) != 1:
                return True, 0
            return False, 2 + sizes[0]
        return (True, 0) if any_variable else (False, sum(sizes))
    if isinstance(t, AnyType):
        return True, 0
    raise ValidationError(f"not a type node: {t!r}")


# -- equality ---------------------------------------------------------------

def type_equals(a: TypeNode, b: TypeNode, env: TypeEnv, env_b: Optional[TypeEnv] = None) -> bool:
    """Structural equality after resolving NamedRefs (coinductive on cycles)."""
    return _teq(a, b, env, env_b or env, set())


def _teq(a, b, ea, eb, assumed):
    if isinstance(a, NamedRef) or isinstance(b, NamedRef):
        key = (a.name if isinstance(a, NamedRef) else id(a),
               b.name if isinstance(b, NamedRef) else id(b))
        if key in assumed:
            return True
        assumed.add(key)
        a2 = ea.resolve(a.name) if isinstance(a, NamedRef) else a
        b2 = eb.resolve(b.name) if isinstance(b, NamedRef) else b
        return _teq(a2, b2, ea, eb, assumed)
    if type(a) is not type(b):
        return False
    if isinstance(a, (Num, Str, AnyType, NilType)):
        return a == b
    if isinstance(a, Array):
        return a.size == b.size and _teq(a.elem, b.elem, ea, eb, assumed)
    if isinstance(a, Struct):
        if a.is_union != b.is_union or len(a.fields) != len(b.fields):
            return False
        for fa, fb in zip(a.fields, b.fields):
            if fa.name != fb.name or fa.optional != fb.optional:
                return False
            if not _teq(fa.typ, fb.typ, ea, eb, assumed):
                return False
        return True
    return False


# -- validation ---------------------------------------------------------------

def iter_nodes(t: TypeNode) -> Iterator[TypeNode]:
    """Pre-order walk of one type expression (NamedRefs are not followed)."""
    stack = [t]
    while stack:
        n = stack.pop()
        yield n
        if isinstance(n, Array):
            stack.append(n.elem)
        elif isinstance(n, Struct):
            stack.extend(f.typ for f in reversed(n.fields))


def _reachable_names(t, env):
    names = set()
    todo = [t]
    while todo:
        for n in iter_nodes(todo.pop()):
            if isinstance(n, NamedRef) and n.name not in names:
                names.add(n.name)
                todo.append(env.resolve(n.name))
    return names


def _check_node(n):
    if isinstance(n, Num):
        if not isinstance(n.kind, NumKind):
            raise ValidationError(f"bad numeric kind {n.kind!r}")
        for d in n.dims:
            if d is not FREE and (not isinstance(d, int) or d < 1):
                raise ValidationError(f"bad dimension {d!r}")
    elif isinstance(n, Str):
        if n.size is not FREE and (not isinstance(n.size, int) or n.size < 1):
            raise ValidationError(f"bad string size {n.size!r}")
    elif isinstance(n, Array):
        if n.size is not FREE and (not isinstance(n.size, int) or n.size < 1):
            raise ValidationError(f"bad array size {n.size!r}")
    elif isinstance(n, Struct):
        seen = set()
        for f in n.fields:
            if not IDENT_RE.match(f.name):
                raise ValidationError(f"bad field name {f.name!r}")
            if f.name in seen:
                raise ValidationError(f"duplicate field name {f.name!r}")
            seen.add(f.name)
            if f.optional and n.is_union:
                raise ValidationError(f"optional field {f.name!r} inside a union")
        if n.is_union and not n.fields:
            raise ValidationError("a union needs at least one field")
    elif isinstance(n, NamedRef):
        if not IDENT_RE.match(n.name) or n.name in KEYWORDS:
            raise ValidationError(f"bad type name {n.name!r}")
    elif not isinstance(n, AnyType):
        raise ValidationError(f"not a type node: {n!r}")


def _unguarded_refs(t):
    """Names reachable from ``t`` without crossing a guard.

    Guards are the places where a finite default instance stops: optional
    fields, Free-size arrays and union variants other than the first.
    """
    out = set()
    stack = [t]
    while stack:
        n = stack.pop()
        if isinstance(n, NamedRef):
            out.add(n.name)
        elif isinstance(n, Array):
            if n.size is not FREE:
                stack.append(n.elem)
        elif isinstance(n, Struct):
            if n.is_union:
                stack.append(n.fields[0].typ)
            else:
                stack.extend(f.typ for f in n.fields if not f.optional)
    return out


def _validate_env(env):
    for name, body in env.typedefs.items():
        if not IDENT_RE.match(name) or name in KEYWORDS:
            raise ValidationError(f"bad type name {name!r}")
    for top in [env.root, *env.typedefs.values()]:
        for n in iter_nodes(top):
            _check_node(n)
            if isinstance(n, NamedRef) and n.name not in env.typedefs:
                raise UnknownTypeName(f"unknown type name {n.name!r}")
    graph = {name: _unguarded_refs(body) for name, body in env.typedefs.items()}
    state = {}

    def visit(name, path):
        state[name] = 1
        for nxt in graph[name]:
            if state.get(nxt) == 1:
                cycle = path[path.index(nxt):] + [nxt] if nxt in path else [name, nxt]
                raise ValidationError(
                    "recursive type can never terminate: " + " -> ".join(cycle))
            if nxt not in state:
                visit(nxt, path + [nxt])
        state[name] = 2

    for name in graph:
        if name not in state:
            visit(name, [name])


# -- printing ---------------------------------------------------------------

def _dims_text(dims):
    return "[" + ",".join("." if d is FREE else str(d) for d in dims) + "]"


def print_type(t: TypeNode, indent: Optional[int] = None, _level: int = 0) -> str:
    """Canonical text of one type expression.

    With ``indent`` set, struct bodies are laid out one field per line.
    """
    if isinstance(t, Num):
        k = t.kind
        if k.is_float:
            s = f"real*{k.width}"
        else:
            s = ("" if k.signed else "unsigned ") + f"integer*{k.width}"
        return s + (_dims_text(t.dims) if t.dims else "")
    if isinstance(t, Str):
        s = "opaque" if t.opaque else "string"
        return s if t.size is FREE else f"{s}*{t.size}"
    if isinstance(t, Array):
        size = "." if t.size is FREE else str(t.size)
        return f"array[{size}] of " + print_type(t.elem, indent, _level)
    if isinstance(t, NamedRef):
        return "type " + t.name
    if isinstance(t, AnyType):
        return "any"
    if isinstance(t, Struct):
        head = "union" if t.is_union else "struct"
        if not t.fields:
            return head + " { }" if indent is None else head + " {\n" + " " * (indent * _level) + "}"
        parts = []
        for f in t.fields:
            opt = "optional " if f.optional else ""
            parts.append(f"{opt}{f.name} : {print_type(f.typ, indent, _level + 1)};")
        if indent is None:
            return head + " { " + " ".join(parts) + " }"
        pad = " " * (indent * (_level + 1))
        return (head + " {\n" + "".join(pad + p + "\n" for p in parts)
                + " " * (indent * _level) + "}")
    if isinstance(t, NilType):
        raise ValidationError("the nil type has no textual form")
    raise ValidationError(f"not a type node: {t!r}")


def print_env(env: TypeEnv, indent: Optional[int] = 4) -> str:
    """Typedefs followed by the root type; the inverse of ``parse_type_text``."""
    sep = "\n" if indent is not None else " "
    out = []
    for name, body in env.typedefs.items():
        out.append(f"typedef {name} = {print_type(body, indent)};")
    out.append(print_type(env.root, indent) + ";")
    return sep.join(out)
