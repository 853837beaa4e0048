"""CLRS-Text rendering, a character-level tokenizer and answer parsing."""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .tasks import (
    FLOAT_SCALAR,
    FLOAT_VECTOR,
    INT_MATRIX,
    INT_SCALAR,
    INT_VECTOR,
    SCHEMAS,
    ProblemInstance,
    as_algorithm,
)


@dataclass(frozen=True)
class TextExample:
    prompt: str
    target: str

    @property
    def text(self) -> str:
        return self.prompt + self.target


def format_number(v, integer: bool = False) -> str:
    if integer:
        return str(int(v))
    v = float(v)
    if v == 0.0:
        v = 0.0
    return np.format_float_positional(v, trim="-")


def format_value(value, kind: str) -> str:
    integer = kind in (INT_SCALAR, INT_VECTOR, INT_MATRIX)
    arr = np.asarray(value)
    if arr.ndim == 0:
        return format_number(arr, integer)
    if arr.ndim == 1:
        return "[" + " ".join(format_number(v, integer) for v in arr) + "]"
    if arr.ndim == 2:
        return "[" + ", ".join(format_value(row, kind) for row in arr) + "]"
    raise ValueError(f"cannot render array of rank {arr.ndim}")


def render_text(instance: ProblemInstance) -> TextExample:
    schema = SCHEMAS[instance.algorithm]
    fields = ", ".join(f"{f.name}: {format_value(instance.inputs[f.name], f.kind)}" for f in schema.inputs)
    prompt = f"{instance.algorithm.value}:\n{fields}\n{schema.output.name}: "
    target = format_value(instance.outputs[schema.output.name], schema.output.kind)
    return TextExample(prompt, target)


def max_target_chars(algorithm, size: int) -> int:
    """Upper bound on the rendered target length for a task at ``size``."""
    out = SCHEMAS[as_algorithm(algorithm)].output
    digits = len(str(size))
    if out.kind == INT_SCALAR:
        return digits + 1
    if out.kind == INT_VECTOR:
        return 2 + size * (digits + 2)
    if out.kind == FLOAT_VECTOR:
        return 2 + size * 7
    if out.kind == INT_MATRIX:
        return 2 + size * (2 + size * (digits + 1) + 2)
    return 8


# --------------------------------------------------------------------------
# tokenizer

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
_ESCAPES = {"<space>": " ", "<newline>": "\n"}


class TokenizationError(ValueError):
    def __init__(self, char: str, position: int):
        super().__init__(f"character {char!r} at position {position} is not in the vocabulary")
        self.char = char
        self.position = position


class Vocabulary:
    def __init__(self, tokens: list[str], version: int = 1):
        self.version = version
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.pad_id = self.index[PAD]
        self.bos_id = self.index[BOS]
        self.eos_id = self.index[EOS]

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def load(cls, text: str | None = None) -> "Vocabulary":
        if text is None:
            text = resources.files("transnar.resources").joinpath("vocab.txt").read_text()
        lines = text.split("\n")
        m = re.match(r"# transnar vocabulary v(\d+)", lines[0])
        if not m:
            raise ValueError("vocabulary file is missing its version header")
        toks = [_ESCAPES.get(line, line) for line in lines[1:] if line != ""]
        return cls(toks, int(m.group(1)))

    def dumps(self) -> str:
        inv = {v: k for k, v in _ESCAPES.items()}
        body = "\n".join(inv.get(t, t) for t in self.tokens)
        return f"# transnar vocabulary v{self.version}\n{body}\n"

    def encode(self, text: str, bos: bool = True, eos: bool = True) -> list[int]:
        ids = [self.bos_id] if bos else []
        for pos, ch in enumerate(text):
            try:
                ids.append(self.index[ch])
            except KeyError:
                raise TokenizationError(ch, pos) from None
        if eos:
            ids.append(self.eos_id)
        return ids

    def decode(self, ids) -> str:
        special = (self.pad_id, self.bos_id, self.eos_id)
        return "".join(self.tokens[i] for i in ids if i not in special)


VOCAB = Vocabulary.load()


def tokenize(text: str, vocab: Vocabulary = VOCAB) -> list[int]:
    return vocab.encode(text)


def detokenize(ids, vocab: Vocabulary = VOCAB) -> str:
    return vocab.decode(ids)


# --------------------------------------------------------------------------
# answer parsing

_INT = r"-?(?:0|[1-9][0-9]*)"
_FLOAT = r"-?[0-9]+(?:\.[0-9]+)?"


@dataclass(frozen=True)
class ParsedOutput:
    status: str
    value: np.ndarray | None = None
    reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _fail(reason: str) -> ParsedOutput:
    return ParsedOutput("parse_failure", None, reason)


def _numbers(body: str, integer: bool) -> list | None:
    if body == "":
        return []
    out = []
    for tok in body.split(" "):
        if not re.fullmatch(_INT if integer else _FLOAT, tok):
            return None
        v = int(tok) if integer else float(tok)
        if integer and not -(2**63) <= v < 2**63:
            return None
        if format_number(v, integer) != tok:
            return None  # non-canonical literal such as "0.50" or "-0"
        out.append(v)
    return out


def normalize_whitespace(raw: str) -> str:
    s = re.sub(r"\s+", " ", raw.strip())
    s = re.sub(r"\[ ", "[", s)
    s = re.sub(r" \]", "]", s)
    return re.sub(r" ?, ?", ", ", s)


def parse_output(raw: str, algorithm, instance_size: int | None = None) -> ParsedOutput:
    """Parse a generated answer span into a typed array.

    Never raises; failures come back with ``status == "parse_failure"`` and a
    short machine-readable ``reason``. The size argument is accepted for
    interface symmetry only; shapes are judged by the scorer.
    """
    try:
        kind = SCHEMAS[as_algorithm(algorithm)].output.kind
    except ValueError:
        return _fail("unknown_algorithm")
    return parse_value(raw, kind)


def parse_value(raw: str, kind: str) -> ParsedOutput:
    s = normalize_whitespace(raw)
    if s == "":
        return _fail("empty")
    if re.search(r"[A-Za-z]", s):
        return _fail("illicit_letters")
    if re.search(r"[^0-9.\-\[\], ]", s):
        return _fail("illicit_characters")
    integer = kind in (INT_SCALAR, INT_VECTOR, INT_MATRIX)
    dtype = np.int64 if integer else np.float64

    if kind in (INT_SCALAR, FLOAT_SCALAR):
        nums = _numbers(s, integer) if " " not in s else None
        if nums is None or len(nums) != 1:
            return _fail("bad_scalar")
        return ParsedOutput("ok", np.asarray(nums[0], dtype=dtype))

    if kind in (INT_VECTOR, FLOAT_VECTOR):
        m = re.fullmatch(r"\[([^\[\]]*)\]", s)
        if not m:
            return _fail("bad_vector")
        nums = _numbers(m.group(1), integer)
        if nums is None:
            return _fail("bad_number")
        return ParsedOutput("ok", np.asarray(nums, dtype=dtype).reshape(len(nums)))

    m = re.fullmatch(r"\[(\[[^\[\]]*\](?:, \[[^\[\]]*\])*)\]", s)
    if not m:
        return _fail("bad_matrix")
    rows = []
    for row in re.findall(r"\[([^\[\]]*)\]", m.group(1)):
        nums = _numbers(row, integer)
        if nums is None:
            return _fail("bad_number")
        rows.append(nums)
    if len({len(r) for r in rows}) > 1:
        return _fail("ragged_matrix")
    return ParsedOutput("ok", np.asarray(rows, dtype=dtype).reshape(len(rows), len(rows[0])))


def parse_prompt(prompt: str) -> ProblemInstance:
    """Recover the (unsolved) instance described by a rendered prompt."""
    from .tasks import make_instance

    lines = prompt.split("\n")
    alg = as_algorithm(lines[0].rstrip(":"))
    schema = SCHEMAS[alg]
    body = lines[1]
    inputs = {}
    names = [f.name for f in schema.inputs]
    for i, f in enumerate(schema.inputs):
        start = body.index(f"{f.name}: ") + len(f.name) + 2
        end = body.index(f", {names[i + 1]}: ", start) if i + 1 < len(names) else len(body)
        parsed = parse_value(body[start:end], f.kind)
        if not parsed.ok:
            raise ValueError(f"cannot parse field {f.name!r}: {parsed.reason}")
        inputs[f.name] = parsed.value
    return make_instance(alg, inputs)

