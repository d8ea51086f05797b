"""Parser, AST and renderer for function-call plans.

A plan is a list of statements such as::

    s1: search(query="https://openai.com/")
    s3: python(file="seo.py", args=[s1])
    s5: chatbot("Summarize {s3} and {s1}.")

Each statement binds a unique ID (``sN``) to the result of one call. IDs are
referenced either bare (``args=[s1]``) or as ``{sN}`` placeholders inside
string literals.
"""

from __future__ import annotations

import enum
import re
from collections.abc import Container, Iterator
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Union

MAX_PLAN_BYTES = 1 << 20
MAX_CALLS = 10_000
MAX_NESTING = 64

SELF = "self"

_ID_RE = re.compile(r"s(0|[1-9][0-9]*)\Z")
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"[0-9]+(\.[0-9]+)?([eE][+-]?[0-9]+)?")


@dataclass(frozen=True, order=True)
class CallId:
    index: int

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError("call index must be non-negative")

    def __str__(self) -> str:
        return f"s{self.index}"

    def __repr__(self) -> str:
        return f"CallId({self})"

    @classmethod
    def parse(cls, text: str) -> CallId:
        m = _ID_RE.match(text)
        if m is None:
            raise ValueError(f"not a call ID: {text!r}")
        return cls(int(m.group(1)))


# -- expressions -------------------------------------------------------------


@dataclass(frozen=True)
class Ref:
    id: CallId


@dataclass(frozen=True)
class Number:
    value: Decimal

    def __eq__(self, other: object) -> bool:
        # Decimal('1.0') == Decimal('1') but they render differently.
        return isinstance(other, Number) and str(self.value) == str(other.value)

    def __hash__(self) -> int:
        return hash(str(self.value))


@dataclass(frozen=True)
class Text:
    """String literal; ``parts`` interleaves literal text with embedded refs."""

    parts: tuple[str | CallId, ...]

    @property
    def refs(self) -> tuple[CallId, ...]:
        return tuple(p for p in self.parts if isinstance(p, CallId))


@dataclass(frozen=True)
class Array:
    items: tuple[Expression, ...]


@dataclass(frozen=True)
class Binary:
    op: str
    left: Expression
    right: Expression


Expression = Union[Ref, Number, Text, Array, Binary]


def expression_refs(expr: Expression) -> Iterator[CallId]:
    """Yield every call ID used by ``expr``, in source order (with repeats)."""
    if isinstance(expr, Ref):
        yield expr.id
    elif isinstance(expr, Text):
        yield from expr.refs
    elif isinstance(expr, Array):
        for item in expr.items:
            yield from expression_refs(item)
    elif isinstance(expr, Binary):
        yield from expression_refs(expr.left)
        yield from expression_refs(expr.right)


@dataclass(frozen=True, eq=True)
class FunctionCall:
    id: CallId
    function: str
    args: dict[str, Expression] = field(default_factory=dict)
    # Names of arguments written positionally (synthetic names arg0, arg1, ...).
    positional: tuple[str, ...] = ()
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)

    __hash__ = None  # type: ignore[assignment]

    def refs(self) -> set[CallId]:
        out: set[CallId] = set()
        for expr in self.args.values():
            out.update(expression_refs(expr))
        return out

    def render(self) -> str:
        return render_call(self)


@dataclass(frozen=True)
class CallSequence:
    calls: tuple[FunctionCall, ...] = ()

    def __len__(self) -> int:
        return len(self.calls)

    def __iter__(self) -> Iterator[FunctionCall]:
        return iter(self.calls)

    @property
    def ids(self) -> list[CallId]:
        return [c.id for c in self.calls]

    def by_id(self) -> dict[CallId, FunctionCall]:
        return {c.id: c for c in self.calls}

    def __getitem__(self, key: CallId | str | int) -> FunctionCall:
        if isinstance(key, int):
            return self.calls[key]
        if isinstance(key, str):
            key = CallId.parse(key)
        for call in self.calls:
            if call.id == key:
                return call
        raise KeyError(str(key))


# -- errors ------------------------------------------------------------------


class ErrorKind(enum.Enum):
    SYNTAX = "SyntaxError"
    UNDEFINED_ID = "UndefinedId"
    DUPLICATE_ID = "DuplicateId"
    USE_BEFORE_DEF = "UseBeforeDef"
    UNKNOWN_FUNCTION = "UnknownFunction"
    MALFORMED_PLACEHOLDER = "MalformedPlaceholder"


class CompileError(Exception):
    def __init__(self, kind: ErrorKind, line: int, column: int, message: str, subject: str = ""):
        self.kind = kind
        self.line = line
        self.column = column
        self.message = message
        # The offending identifier or function name, when there is one.
        self.subject = subject
        super().__init__(self.render())

    def render(self) -> str:
        return f"{self.kind.value} at line {self.line}, column {self.column}: {self.message}"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "line": self.line,
            "column": self.column,
            "message": self.message,
            "subject": self.subject,
        }


# -- lexer -------------------------------------------------------------------


class _Tok(enum.Enum):
    ID = "call ID"
    NAME = "name"
    NUMBER = "number"
    STRING = "string"
    PUNCT = "punctuation"
    EOF = "end of input"
    ERROR = "error"


@dataclass
class _Token:
    kind: _Tok
    value: object
    line: int
    column: int
    end_line: int = 0

    def describe(self) -> str:
        if self.kind is _Tok.EOF:
            return "end of input"
        if self.kind is _Tok.STRING:
            return "a string literal"
        return repr(str(self.value) if not isinstance(self.value, str) else self.value)


_PUNCT = set("()[],=:+-*/")
_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\", '"': '"', "'": "'", "{": "{{", "}": "}}"}


class _Lexer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1

    def _advance(self, n: int = 1) -> None:
        for _ in range(n):
            if self.text[self.pos] == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            self.pos += 1

    def tokens(self) -> list[_Token]:
        """Tokenize; a lexical error becomes a trailing ERROR token."""
        out: list[_Token] = []
        try:
            self._scan(out)
        except CompileError as exc:
            out.append(_Token(_Tok.ERROR, exc, exc.line, exc.column, exc.line))
        return out

    def _scan(self, out: list[_Token]) -> None:
        text = self.text
        while True:
            while self.pos < len(text):
                ch = text[self.pos]
                if ch in " \t\r\n\f\v":
                    self._advance()
                elif ch == "#":
                    while self.pos < len(text) and text[self.pos] != "\n":
                        self._advance()
                else:
                    break
            if self.pos >= len(text):
                out.append(_Token(_Tok.EOF, None, self.line, self.col, self.line))
                return
            ch = text[self.pos]
            line, col = self.line, self.col
            if ch in "\"'":
                raw = self._string(ch)
                out.append(_Token(_Tok.STRING, raw, line, col, self.line))
            elif "0" <= ch <= "9":
                m = _NUMBER_RE.match(text, self.pos)
                assert m is not None
                self._advance(m.end() - m.start())
                out.append(_Token(_Tok.NUMBER, m.group(0), line, col, line))
            elif ch.isascii() and (ch.isalpha() or ch == "_"):
                m = _NAME_RE.match(text, self.pos)
                assert m is not None
                word = m.group(0)
                self._advance(len(word))
                if word[0] == "s" and word[1:].isdigit():
                    if _ID_RE.match(word) is None:
                        raise CompileError(
                            ErrorKind.SYNTAX, line, col,
                            f"Call ID {word} has a leading zero; write it without one.", word,
                        )
                    out.append(_Token(_Tok.ID, CallId(int(word[1:])), line, col, line))
                else:
                    out.append(_Token(_Tok.NAME, word, line, col, line))
            elif ch in _PUNCT:
                self._advance()
                out.append(_Token(_Tok.PUNCT, ch, line, col, line))
            elif ch == "$":
                raise CompileError(
                    ErrorKind.SYNTAX, line, col,
                    "References of the form $N are not supported; refer to results as sN.", "$",
                )
            else:
                raise CompileError(ErrorKind.SYNTAX, line, col, f"Unexpected character {ch!r}.", ch)

    def _string(self, quote: str) -> list[tuple[str, int, int]]:
        """Scan a string literal and return (chunk, line, col) pieces.

        Escapes are decoded here; brace handling is left to the placeholder
        pass, which needs positions. Escaped braces are emitted doubled so
        they come out literal.
        """
        start_line, start_col = self.line, self.col
        self._advance()
        pieces: list[tuple[str, int, int]] = []
        text = self.text
        while True:
            if self.pos >= len(text):
                raise CompileError(
                    ErrorKind.SYNTAX, start_line, start_col, "A string literal is never closed.", quote
                )
            ch = text[self.pos]
            line, col = self.line, self.col
            if ch == quote:
                self._advance()
                return pieces
            if ch == "\\":
                if self.pos + 1 >= len(text):
                    raise CompileError(
                        ErrorKind.SYNTAX, start_line, start_col, "A string literal is never closed.", quote
                    )
                esc = text[self.pos + 1]
                if esc in _ESCAPES:
                    self._advance(2)
                    pieces.append((_ESCAPES[esc], line, col))
                elif esc == "u":
                    digits = text[self.pos + 2 : self.pos + 6]
                    if len(digits) != 4 or not all(c in "0123456789abcdefABCDEF" for c in digits):
                        raise CompileError(
                            ErrorKind.SYNTAX, line, col, "A \\u escape needs exactly four hex digits.", "\\u"
                        )
                    self._advance(6)
                    c = chr(int(digits, 16))
                    pieces.append((c * 2 if c in "{}" else c, line, col))
                else:
                    raise CompileError(ErrorKind.SYNTAX, line, col, f"Unknown escape sequence \\{esc}.", esc)
            else:
                self._advance()
                pieces.append((ch, line, col))


def _split_placeholders(pieces: list[tuple[str, int, int]]) -> tuple[tuple[str | CallId, ...], list[tuple[CallId, int, int]]]:
    chars: list[tuple[str, int, int]] = []
    for chunk, line, col in pieces:
        for c in chunk:
            chars.append((c, line, col))
    parts: list[str | CallId] = []
    refs: list[tuple[CallId, int, int]] = []
    buf: list[str] = []
    i = 0
    n = len(chars)
    while i < n:
        c, line, col = chars[i]
        if c == "{":
            if i + 1 < n and chars[i + 1][0] == "{":
                buf.append("{")
                i += 2
                continue
            j = i + 1
            while j < n and chars[j][0] != "}" and j - i <= 12:
                j += 1
            inner = "".join(ch for ch, _, _ in chars[i + 1 : j])
            if j >= n or chars[j][0] != "}" or _ID_RE.match(inner) is None:
                shown = inner if len(inner) <= 12 else inner[:12] + "..."
                raise CompileError(
                    ErrorKind.MALFORMED_PLACEHOLDER, line, col,
                    f"The placeholder {{{shown} must be a call ID closed by '}}', such as {{s1}}; "
                    "write {{ for a literal brace.",
                    "{" + shown,
                )
            if buf:
                parts.append("".join(buf))
                buf = []
            cid = CallId.parse(inner)
            parts.append(cid)
            refs.append((cid, line, col))
            i = j + 1
        elif c == "}":
            buf.append("}")
            i += 2 if i + 1 < n and chars[i + 1][0] == "}" else 1
        else:
            buf.append(c)
            i += 1
    if buf:
        parts.append("".join(buf))
    return tuple(parts), refs


# -- parser ------------------------------------------------------------------


@dataclass
class _RefSite:
    id: CallId
    line: int
    column: int


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.toks = tokens
        self.i = 0
        self.depth = 0
        self.sites: list[_RefSite] = []
        self.done: list[tuple[FunctionCall, list[_RefSite]]] = []

    @property
    def cur(self) -> _Token:
        tok = self.toks[self.i]
        if tok.kind is _Tok.ERROR:
            raise tok.value  # type: ignore[misc]
        return tok

    def _peek(self) -> _Token:
        tok = self.toks[min(self.i + 1, len(self.toks) - 1)]
        if tok.kind is _Tok.ERROR:
            raise tok.value  # type: ignore[misc]
        return tok

    def _error(self, msg: str, tok: _Token | None = None) -> CompileError:
        tok = tok or self.cur
        return CompileError(ErrorKind.SYNTAX, tok.line, tok.column, msg, str(tok.value or ""))

    def _punct(self, ch: str) -> bool:
        tok = self.cur
        return tok.kind is _Tok.PUNCT and tok.value == ch

    def _expect(self, ch: str, what: str) -> _Token:
        if not self._punct(ch):
            raise self._error(f"Expected '{ch}' {what} but found {self.cur.describe()}.")
        tok = self.cur
        self.i += 1
        return tok

    def statements(self) -> list[tuple[FunctionCall, list[_RefSite]]]:
        out = self.done
        prev_end_line = 0
        while self.cur.kind is not _Tok.EOF:
            tok = self.cur
            if tok.kind is not _Tok.ID:
                raise self._error(f"Expected a call ID such as s1 to start a statement but found {tok.describe()}.")
            if tok.line == prev_end_line:
                raise self._error("Each statement must start on a new line.")
            if len(out) >= MAX_CALLS:
                raise self._error(f"A plan may contain at most {MAX_CALLS} calls.")
            self.sites = []
            call, end_line = self._statement()
            out.append((call, self.sites))
            prev_end_line = end_line
        return out

    def _statement(self) -> tuple[FunctionCall, int]:
        id_tok = self.cur
        self.i += 1
        self._expect(":", f"after {id_tok.value}")
        fn_tok = self.cur
        if fn_tok.kind is not _Tok.NAME:
            raise self._error(f"Expected a function name after '{id_tok.value}:' but found {fn_tok.describe()}.")
        self.i += 1
        self._expect("(", f"after the function name {fn_tok.value}")
        args: dict[str, Expression] = {}
        positional: list[str] = []
        while not self._punct(")"):
            if self.cur.kind is _Tok.EOF:
                raise self._error(f"The argument list of {id_tok.value} is never closed.")
            name_tok = self.cur
            nxt = self._peek()
            if name_tok.kind is _Tok.NAME and nxt.kind is _Tok.PUNCT and nxt.value == "=":
                self.i += 2
                name = str(name_tok.value)
            else:
                name = f"arg{len(positional)}"
                positional.append(name)
            if name in args:
                raise self._error(f"Argument {name} is given more than once in {id_tok.value}.", name_tok)
            args[name] = self._expr()
            if self._punct(","):
                self.i += 1
            elif not self._punct(")"):
                raise self._error(f"Expected ',' or ')' in the arguments of {id_tok.value} but found {self.cur.describe()}.")
        close = self.cur
        self.i += 1
        call = FunctionCall(
            id=id_tok.value,  # type: ignore[arg-type]
            function=str(fn_tok.value),
            args=args,
            positional=tuple(positional),
            line=id_tok.line,
            column=id_tok.column,
        )
        return call, close.end_line

    def _expr(self) -> Expression:
        self.depth += 1
        if self.depth > MAX_NESTING:
            raise self._error(f"Expressions may nest at most {MAX_NESTING} levels deep.")
        left = self._term()
        while self._punct("+") or self._punct("-"):
            op = str(self.cur.value)
            self.i += 1
            left = Binary(op, left, self._term())
        self.depth -= 1
        return left

    def _term(self) -> Expression:
        left = self._primary()
        while self._punct("*") or self._punct("/"):
            op = str(self.cur.value)
            self.i += 1
            left = Binary(op, left, self._primary())
        return left

    def _primary(self) -> Expression:
        tok = self.cur
        if tok.kind is _Tok.ID:
            self.i += 1
            self.sites.append(_RefSite(tok.value, tok.line, tok.column))  # type: ignore[arg-type]
            return Ref(tok.value)  # type: ignore[arg-type]
        if tok.kind is _Tok.NUMBER:
            self.i += 1
            return Number(_decimal(str(tok.value), tok))
        if tok.kind is _Tok.STRING:
            self.i += 1
            parts, refs = _split_placeholders(tok.value)  # type: ignore[arg-type]
            self.sites.extend(_RefSite(cid, line, col) for cid, line, col in refs)
            return Text(parts)
        if self._punct("-"):
            nxt = self._peek()
            if nxt.kind is not _Tok.NUMBER:
                raise self._error("A leading minus sign may only precede a number.")
            self.i += 2
            return Number(_decimal("-" + str(nxt.value), nxt))
        if self._punct("["):
            self.i += 1
            self.depth += 1
            if self.depth > MAX_NESTING:
                raise self._error(f"Arrays may nest at most {MAX_NESTING} levels deep.")
            items: list[Expression] = []
            while not self._punct("]"):
                if self.cur.kind is _Tok.EOF:
                    raise self._error("An array literal is never closed.", tok)
                items.append(self._expr())
                if self._punct(","):
                    self.i += 1
                elif not self._punct("]"):
                    raise self._error(f"Expected ',' or ']' in an array but found {self.cur.describe()}.")
            self.i += 1
            self.depth -= 1
            return Array(tuple(items))
        if self._punct("("):
            self.i += 1
            inner = self._expr()
            self._expect(")", "to close the parenthesis")
            return inner
        if tok.kind is _Tok.NAME:
            raise self._error(
                f"Unexpected name {tok.value}; arguments are call IDs, numbers, strings or arrays."
            )
        raise self._error(f"Expected an argument value but found {tok.describe()}.")


def _decimal(text: str, tok: _Token) -> Decimal:
    try:
        return Decimal(text)
    except InvalidOperation:  # pragma: no cover - the lexer regex prevents this
        raise CompileError(ErrorKind.SYNTAX, tok.line, tok.column, f"Invalid number {text}.", text)


def parse_sequence(text: str | bytes) -> CallSequence:
    """Parse plan text into a validated :class:`CallSequence`.

    Raises :class:`CompileError` describing the leftmost violation.
    """
    if isinstance(text, (bytes, bytearray)):
        if len(text) > MAX_PLAN_BYTES:
            raise CompileError(ErrorKind.SYNTAX, 1, 1, f"The plan exceeds the {MAX_PLAN_BYTES}-byte limit.")
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CompileError(ErrorKind.SYNTAX, 1, exc.start + 1, "The plan is not valid UTF-8.") from None
    elif len(text) > MAX_PLAN_BYTES or len(text.encode("utf-8", "surrogatepass")) > MAX_PLAN_BYTES:
        raise CompileError(ErrorKind.SYNTAX, 1, 1, f"The plan exceeds the {MAX_PLAN_BYTES}-byte limit.")

    syntax_error: CompileError | None = None
    parser = _Parser(_Lexer(text).tokens())
    try:
        parser.statements()
    except CompileError as exc:
        syntax_error = exc
    stmts = parser.done
    if syntax_error is None and not stmts:
        raise CompileError(ErrorKind.SYNTAX, 1, 1, "The plan contains no function calls.")

    semantic = _check_semantics(stmts)
    candidates = [e for e in (syntax_error, semantic) if e is not None]
    if candidates:
        raise min(candidates, key=lambda e: (e.line, e.column))
    return CallSequence(tuple(call for call, _ in stmts))


def parse_call(text: str) -> FunctionCall:
    """Parse exactly one statement; refs to other calls are not checked."""
    parser = _Parser(_Lexer(text).tokens())
    stmts = parser.statements()
    if len(stmts) != 1:
        raise CompileError(ErrorKind.SYNTAX, 1, 1, f"Expected exactly one call, found {len(stmts)}.")
    call, sites = stmts[0]
    for site in sites:
        if site.id == call.id:
            raise CompileError(
                ErrorKind.USE_BEFORE_DEF, site.line, site.column,
                f"{call.id} uses {site.id} before it is defined; a call cannot use its own result.", str(site.id),
            )
    return call


def _check_semantics(stmts: list[tuple[FunctionCall, list[_RefSite]]]) -> CompileError | None:
    first_def: dict[CallId, FunctionCall] = {}
    for call, _ in stmts:
        first_def.setdefault(call.id, call)
    defined: set[CallId] = set()
    for call, sites in stmts:
        for site in sites:
            if site.id in defined:
                continue
            if site.id in first_def and first_def[site.id] is not call:
                detail = f"it is only defined later, on line {first_def[site.id].line}"
            elif site.id == call.id:
                detail = "a call cannot use its own result"
            elif site.id < call.id:
                # Numbered like an earlier call, yet nothing defines it.
                return CompileError(
                    ErrorKind.UNDEFINED_ID, site.line, site.column,
                    f"{call.id} uses {site.id}, but no call in this plan is named {site.id}.", str(site.id),
                )
            else:
                detail = "it is never defined in this plan"
            return CompileError(
                ErrorKind.USE_BEFORE_DEF, site.line, site.column,
                f"{call.id} uses {site.id} before it is defined; {detail}.", str(site.id),
            )
        if call.id in defined:
            return CompileError(
                ErrorKind.DUPLICATE_ID, call.line, call.column,
                f"The call ID {call.id} is defined more than once.", str(call.id),
            )
        defined.add(call.id)
    return None


def validate_against_registry(seq: CallSequence, registry: Container[str]) -> None:
    """Check every called function is ``self`` or declared in ``registry``."""
    for call in seq:
        if call.function != SELF and call.function not in registry:
            raise CompileError(
                ErrorKind.UNKNOWN_FUNCTION, call.line, call.column,
                f"{call.id} calls {call.function}, which is not an available function.", call.function,
            )


# -- rendering ---------------------------------------------------------------


def _render_text(parts: tuple[str | CallId, ...]) -> str:
    out = ['"']
    for part in parts:
        if isinstance(part, CallId):
            out.append("{" + str(part) + "}")
            continue
        for c in part:
            if c == "\\":
                out.append("\\\\")
            elif c == '"':
                out.append('\\"')
            elif c == "\n":
                out.append("\\n")
            elif c == "\t":
                out.append("\\t")
            elif c == "\r":
                out.append("\\r")
            elif c == "{":
                out.append("{{")
            elif c == "}":
                out.append("}}")
            elif ord(c) < 0x20 or 0xD800 <= ord(c) <= 0xDFFF:
                out.append(f"\\u{ord(c):04x}")
            else:
                out.append(c)
    out.append('"')
    return "".join(out)


def render_expression(expr: Expression) -> str:
    if isinstance(expr, Ref):
        return str(expr.id)
    if isinstance(expr, Number):
        return str(expr.value)
    if isinstance(expr, Text):
        return _render_text(expr.parts)
    if isinstance(expr, Array):
        return "[" + ", ".join(render_expression(i) for i in expr.items) + "]"
    if isinstance(expr, Binary):
        def side(e: Expression) -> str:
            s = render_expression(e)
            return f"({s})" if isinstance(e, Binary) else s

        return f"{side(expr.left)} {expr.op} {side(expr.right)}"
    raise TypeError(f"not an expression: {expr!r}")


def render_call(call: FunctionCall) -> str:
    pieces = []
    for name, expr in call.args.items():
        value = render_expression(expr)
        pieces.append(value if name in call.positional else f"{name}={value}")
    return f"{call.id}: {call.function}({', '.join(pieces)})"


def render_sequence(seq: CallSequence) -> str:
    return "\n".join(render_call(c) for c in seq) + ("\n" if len(seq) else "")
