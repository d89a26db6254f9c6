"""Tokenizer for Vex source text."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import Diagnostic, ParseError

KEYWORDS = {
    "pub", "fn", "let", "if", "else", "while", "return", "throw", "try", "catch",
    "and", "or", "not", "true", "false", "null",
}

SYMBOLS = (
    "::", "==", "!=", "<=", ">=",
    "(", ")", "{", "}", "[", "]", ",", ";", ":", ".", "@",
    "+", "-", "*", "/", "%", "<", ">", "=",
)


@dataclass(frozen=True)
class Token:
    kind: str  # ident kw int float string symbol eof
    text: str
    line: int
    col: int


_UNESCAPES = {"n": "\n", "t": "\t", "r": "\r", '"': '"', "\\": "\\"}

MAX_INT = 2**63 - 1


def tokenize(source: str, origin: str = "<string>") -> list[Token]:
    tokens: list[Token] = []
    i, line, col = 0, 1, 1
    n = len(source)

    def err(msg: str, ln: int, cl: int) -> ParseError:
        return ParseError([Diagnostic(msg, origin, ln, cl)])

    while i < n:
        ch = source[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and source[i] != "\n":
                i += 1
            continue
        start_line, start_col = line, col
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            text = source[i:j]
            kind = "kw" if text in KEYWORDS else "ident"
            tokens.append(Token(kind, text, start_line, start_col))
            col += j - i
            i = j
            continue
        if ch.isdigit():
            j = i
            while j < n and source[j].isdigit():
                j += 1
            is_float = False
            if j < n - 1 and source[j] == "." and source[j + 1].isdigit():
                is_float = True
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
            text = source[i:j]
            if not is_float and int(text) > MAX_INT:
                raise err(f"integer literal out of 64-bit range: {text}", start_line, start_col)
            tokens.append(Token("float" if is_float else "int", text, start_line, start_col))
            col += j - i
            i = j
            continue
        if ch == '"':
            j = i + 1
            out: list[str] = []
            while True:
                if j >= n or source[j] == "\n":
                    raise err("unterminated string literal", start_line, start_col)
                c = source[j]
                if c == '"':
                    j += 1
                    break
                if c == "\\":
                    if j + 1 >= n:
                        raise err("unterminated escape", start_line, start_col)
                    esc = source[j + 1]
                    if esc not in _UNESCAPES:
                        raise err(f"unknown escape \\{esc}", line, col + (j - i))
                    out.append(_UNESCAPES[esc])
                    j += 2
                    continue
                out.append(c)
                j += 1
            tokens.append(Token("string", "".join(out), start_line, start_col))
            col += j - i
            i = j
            continue
        matched = None
        for sym in SYMBOLS:
            if source.startswith(sym, i):
                matched = sym
                break
        if matched is None:
            raise err(f"unexpected character {ch!r}", start_line, start_col)
        tokens.append(Token("symbol", matched, start_line, start_col))
        i += len(matched)
        col += len(matched)
    tokens.append(Token("eof", "", line, col))
    return tokens
