"""Exception hierarchy.

Every failure the library reports is a subclass of :class:`StructFileError`.
The CLI maps :class:`FormatError` (and type-text errors) to exit status 2 and
:class:`AccessError` to exit status 3.
"""


class StructFileError(Exception):
    pass


# type system / type text

class TypeSpecError(StructFileError):
    pass


class ValidationError(TypeSpecError):
    pass


class UnknownTypeName(ValidationError):
    pass


class VariableSize(TypeSpecError):
    pass


class ParseError(TypeSpecError):
    def __init__(self, message, line=0, column=0, offset=0, expected=()):
        self.line = line
        self.column = column
        self.offset = offset
        self.expected = tuple(expected)
        super().__init__(f"{line}:{column}: {message}")


class LexError(ParseError):
    pass


# data access

class AccessError(StructFileError):
    pass


class NullHandle(AccessError):
    pass


class WrongType(AccessError):
    pass


class NoSuchField(AccessError):
    pass


class FieldNotPresent(AccessError):
    pass


class InactiveUnionField(AccessError):
    pass


class IndexOutOfRange(AccessError):
    pass


class FixedSize(AccessError):
    pass


class OutOfRange(AccessError):
    pass


class LossyRead(AccessError):
    pass


class ShapeMismatch(AccessError):
    pass


class StringTooLong(AccessError):
    pass


class NotOptional(AccessError):
    pass


class TypeMismatch(AccessError):
    pass


class UnboundAny(AccessError):
    pass


class AlreadyBound(AccessError):
    pass


class NotAnyType(AccessError):
    pass


class ReadOnly(AccessError):
    pass


class WriteOnlySession(AccessError):
    pass


class PathSyntax(AccessError):
    pass


class AtEnd(AccessError):
    pass


class NoChildren(AccessError):
    pass


class AtRoot(AccessError):
    pass


class IncompletePrefix(AccessError):
    pass


class UnsetReference(AccessError):
    pass


class BadDescriptor(AccessError):
    pass


# file formats

class FormatError(StructFileError):
    """A malformed file or stream. ``offset`` is the byte position, if known."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class BadMagic(FormatError):
    pass


class UnsupportedVersion(FormatError):
    pass


class UnknownFlag(FormatError):
    pass


class WrongMode(FormatError):
    pass


class Truncated(FormatError):
    pass


class TrailingData(FormatError):
    pass


class BadOptionalTag(FormatError):
    pass


class BadUnionSelector(FormatError):
    pass


class NegativeCount(FormatError):
    pass


class CountOverflow(FormatError):
    pass


class AnyTypeParseError(FormatError):
    pass


class TooDeep(FormatError):
    pass


class TextSyntaxError(FormatError):
    pass


class TypeMismatchInData(FormatError):
    pass


class NotSeekable(FormatError):
    pass


class CursorOrderViolation(StructFileError):
    pass


# block store

class StoreError(StructFileError):
    pass


class BlockLocked(StoreError):
    pass


class StoreLocked(StoreError):
    pass


class BadAddress(StoreError):
    pass


class DoubleRelease(StoreError):
    pass


class StoreCorrupt(StoreError, FormatError):
    def __init__(self, message, invariant=None):
        self.invariant = invariant
        FormatError.__init__(self, message)
