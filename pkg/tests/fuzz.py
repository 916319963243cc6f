"""Fuzz driver: decoders and parsers on hostile input.

Each iteration builds one input, feeds it to one entry point and times it.
Only ``StructFileError`` may escape; anything else is recorded as a crash.
Run standalone with ``python3 tests/fuzz.py [iterations] [seed]``.
"""
import random
import signal
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from structfile import (decode_file, encode_file, open_binary, print_data, print_env,  # noqa: E402
                        read_data)
from structfile.ddl import parse_type_text  # noqa: E402
from structfile.errors import StructFileError  # noqa: E402

from gen import random_case  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"

DDL_WORDS = ["struct", "union", "array", "of", "optional", "typedef", "type", "any", "string",
             "opaque", "integer", "unsigned", "real", "{", "}", "[", "]", "*", ",", ":", ";", "=",
             ".", "1", "2", "4", "8", "16", "0", "99999999999", "-1", "x", "y", "\n", " "]
DATA_WORDS = ["{", "}", "[", "]", ",", "=", ":", "(", ")", ";", "x\"00ff\"", "\"a\"", "\"\\u00e9\"",
              "\"\\", "1", "-3", "2.5e10", "nan", "-inf", "0x10", "1e999", "999999999999999999999",
              "integer*2", "string", "any", " ", "\n", "a", "b", "x", "label", "payload"]


class Hang(Exception):
    pass


def _alarm(signum, frame):
    raise Hang()


# inputs stay small, so the time cap measures per-byte cost rather than size
MAX_INPUT = 4096


class Corpus:
    def __init__(self, rng, n_random=40):
        self.files = [(FIXTURES / "molecule.sf").read_bytes(), (FIXTURES / "any_fields.sf").read_bytes()]
        self.types = []
        self.texts = []
        while len(self.types) < n_random:
            env, v = random_case(rng.getrandbits(32), any_p=0.15)
            raw = encode_file(v, rng.choice(["BINARY_BE", "BINARY_LE"]))
            text = print_data(v)
            if len(raw) > MAX_INPUT or len(text) > MAX_INPUT:
                continue
            self.files.append(raw)
            self.types.append(print_env(env))
            self.texts.append((env, text))
        self.headers = []
        for raw in self.files:
            i = raw.index(b"\nDATA\n") + 6
            self.headers.append(raw[:i])


def mutate(rng, b: bytes) -> bytes:
    b = bytearray(b)
    for _ in range(rng.randint(1, 5)):
        k = rng.random()
        if k < 0.4 and b:
            b[rng.randrange(len(b))] = rng.randrange(256)
        elif k < 0.55 and b:
            # a large or negative 4-byte value, to stress count checks
            i = rng.randrange(len(b))
            b[i:i + 4] = rng.choice([b"\x7f\xff\xff\xff", b"\xff\xff\xff\xff", b"\x00\x10\x00\x00",
                                     b"\xff\xff\xff\x7f", b"\x80\x00\x00\x00"])
        elif k < 0.7 and b:
            i = rng.randrange(len(b))
            del b[i:i + rng.randint(1, 8)]
        elif k < 0.85:
            i = rng.randrange(len(b) + 1)
            b[i:i] = rng.randbytes(rng.randint(1, 6))
        else:
            b = b[:rng.randrange(len(b) + 1)]
    return bytes(b)


def byte_input(rng, corpus: Corpus) -> bytes:
    k = rng.random()
    if k < 0.1:
        return rng.randbytes(rng.randint(0, 64))
    if k < 0.4:
        return rng.choice(corpus.headers) + rng.randbytes(rng.randint(0, 96))
    if k < 0.5:
        head = rng.choice([b"STRUCTURED FILE V0.1 BINARY_BE\n", b"STRUCTURED FILE V0.1 BINARY_LE\n"])
        return head + b"TYPE\n" + rng.randbytes(rng.randint(0, 48)) + b"\nDATA\n" + rng.randbytes(16)
    return mutate(rng, rng.choice(corpus.files))


def soup(rng, words, n) -> str:
    return "".join(rng.choice(words) + rng.choice(["", " "]) for _ in range(rng.randint(0, n)))


def text_input(rng, corpus: Corpus):
    """``(env or None, text)``; ``None`` means a type text."""
    k = rng.random()
    if k < 0.15:
        return None, "".join(chr(rng.choice([rng.randrange(32, 127), rng.randrange(0, 0x3000)]))
                             for _ in range(rng.randint(0, 40)))
    if k < 0.35:
        return None, soup(rng, DDL_WORDS, 40)
    if k < 0.55:
        src = rng.choice(corpus.types).encode("utf-8")
        return None, mutate(rng, src).decode("utf-8", "replace")
    env, text = rng.choice(corpus.texts)
    if k < 0.7:
        return env, soup(rng, DATA_WORDS, 30)
    return env, mutate(rng, text.encode("utf-8")).decode("utf-8", "replace")


def run_one_bytes(rng, raw):
    if rng.random() < 0.2:
        # lazy path: open, then pull every node through the printer
        s = open_binary(raw)
        print_data(s.root())
        s.check_end()
    else:
        decode_file(raw)


def run_one_text(env, text):
    if env is None:
        parse_type_text(text)
    else:
        read_data(env, None, text)


def run_fuzz(iterations: int, seed: int = 0, cap: float = 0.100, hang_after: float = 2.0):
    rng = random.Random(seed)
    corpus = Corpus(rng)
    stats = {"iterations": 0, "defined_errors": 0, "accepted": 0, "crashes": [], "slow": [],
             "max_seconds": 0.0, "seconds": 0.0}
    old = signal.signal(signal.SIGALRM, _alarm)
    start = time.perf_counter()
    try:
        for i in range(iterations):
            as_bytes = i % 2 == 0
            if as_bytes:
                inp = byte_input(rng, corpus)
            else:
                env, inp = text_input(rng, corpus)
            signal.setitimer(signal.ITIMER_REAL, hang_after)
            t0 = time.perf_counter()
            try:
                if as_bytes:
                    run_one_bytes(rng, inp)
                else:
                    run_one_text(env, inp)
                stats["accepted"] += 1
            except StructFileError:
                stats["defined_errors"] += 1
            except Hang:
                stats["crashes"].append(("Hang", repr(inp)[:200]))
            except BaseException as exc:    # anything else is a robustness failure
                stats["crashes"].append((type(exc).__name__ + ": " + str(exc)[:100], repr(inp)[:200]))
            finally:
                signal.setitimer(signal.ITIMER_REAL, 0)
            dt = time.perf_counter() - t0
            if dt > stats["max_seconds"]:
                stats["max_seconds"] = dt
            if dt > cap:
                stats["slow"].append((dt, repr(inp)[:200]))
            stats["iterations"] += 1
    finally:
        signal.signal(signal.SIGALRM, old)
    stats["seconds"] = time.perf_counter() - start
    stats["crashes"] = stats["crashes"][:20]
    stats["slow"] = sorted(stats["slow"], reverse=True)[:20]
    return stats


if __name__ == "__main__":
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 10000
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
    res = run_fuzz(n, seed)
    for k, v in res.items():
        print(k, v)
