"""Self-describing structured data files.

Types are trees written in a small definition language; every file carries
its own type text in a header, followed by the data as text or as packed
binary.  Binary files can be read lazily, written incrementally, or kept in
a block store that is updated in place.
"""
from . import errors
from .errors import *  # noqa: F401,F403
from .types import (ANY, FREE, NIL, AnyType, Array, Field, NamedRef, Num, NumKind, Str, Struct,
                    TypeEnv, fixed_byte_size, is_variable_size, iter_nodes, print_env, print_type,
                    type_equals)
from .ddl import parse_type, parse_type_text
from .matrix import LossyConversionWarning, MatrixShape, MatrixValue
from .data import (MAX_NESTING, DataHandle, TreeCursor, copy_into, count_nodes, cursor_down,
                   cursor_has_subs, cursor_next, cursor_up, data_equal, new_direct, parse_path,
                   path_get, to_python)
from .text import data_to_text, print_data, read_data
from .binary import (DataFile, FileHeader, StreamWriter, begin_stream_write, close_region,
                     decode_file, decode_value, emit_enter, emit_next, encode_file, encode_value,
                     finish_stream_write, scan_header, write_header)
from .stream import FileSession, child_offset, open_binary
from .blockstore import (BlockHandle, MallocFile, audit_layout, store_handle, verify_store)
from .typedesc import (TYPE_DESCRIPTOR, actualize_type, data_to_env, data_to_type, env_to_data,
                       type_to_data)

__version__ = "0.1.0"
