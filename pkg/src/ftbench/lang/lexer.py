"""Tokeniser for recovery scripts.

Keywords are case-insensitive, so word tokens carry an upper-cased
``value``.  Newlines are significant statement separators except inside
square brackets and parentheses, where guards may span several lines.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

NUM, REAL, STR, WORD, REF, SYM, NL, EOF = (
    "NUM", "REAL", "STR", "WORD", "REF", "SYM", "NL", "EOF")

# a kind word glued to its number, as in T0 or NODE3
_GLUED = re.compile(r"^(T|TASK|THREAD|G|GROUP|LOGICAL|N|NODE)(\d+)$")
_INCLUDE_LINE = re.compile(r'^\s*#\s*include\s+"([^"]*)"\s*$', re.IGNORECASE)

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<str>"[^"\n]*")
  | (?P<ref>\{\s*[A-Za-z_][A-Za-z0-9_]*\s*\})
  | (?P<real>\d+\.\d*|\.\d+)
  | (?P<num>\d+)
  | (?P<hyph>(?i:N-VERSION|ALPHA-COUNT)\b)
  | (?P<word>[A-Za-z_][A-Za-z0-9_']*)
  | (?P<sym>==|!=|>=|<=|[=,\[\]()@~$*\-|;.<>&{}])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    type: str
    value: object
    line: int
    text: str = ""

    def is_word(self, *words: str) -> bool:
        return self.type == WORD and self.value in words

    def is_sym(self, *syms: str) -> bool:
        return self.type == SYM and self.value in syms


class LexError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(msg)
        self.line = line


def tokenize(text: str) -> tuple[list[Token], list[LexError]]:
    """Return the tokens of ``text`` and any lexical errors.

    A bad character is reported and skipped, so parsing can still go on.
    """
    tokens: list[Token] = []
    errors: list[LexError] = []
    depth = 0
    line = 1
    for raw in text.split("\n"):
        m = _INCLUDE_LINE.match(raw)
        if m:
            tokens.append(Token(WORD, "INCLUDE", line, "#include"))
            tokens.append(Token(STR, m.group(1), line, f'"{m.group(1)}"'))
            tokens.append(Token(NL, "\n", line))
            line += 1
            continue
        pos = 0
        while pos < len(raw):
            m = _TOKEN.match(raw, pos)
            if not m:
                errors.append(LexError(line, f"unexpected character {raw[pos]!r}"))
                pos += 1
                continue
            kind = m.lastgroup
            s = m.group()
            pos = m.end()
            if kind in ("ws", "comment"):
                continue
            if kind == "str":
                tokens.append(Token(STR, s[1:-1], line, s))
            elif kind == "ref":
                tokens.append(Token(REF, s[1:-1].strip(), line, s))
            elif kind == "real":
                tokens.append(Token(REAL, float(s), line, s))
            elif kind == "num":
                tokens.append(Token(NUM, int(s), line, s))
            elif kind == "hyph":
                tokens.append(Token(WORD, s.upper().replace("-", ""), line, s))
            elif kind == "word":
                up = s.upper()
                g = _GLUED.match(up)
                if g:
                    tokens.append(Token(WORD, g.group(1), line, s[:len(g.group(1))]))
                    tokens.append(Token(NUM, int(g.group(2)), line, g.group(2)))
                else:
                    tokens.append(Token(WORD, up, line, s))
            else:
                if s in "[(":
                    depth += 1
                elif s in "])":
                    depth = max(0, depth - 1)
                tokens.append(Token(SYM, s, line, s))
        if depth == 0:
            tokens.append(Token(NL, "\n", line))
        line += 1
    tokens.append(Token(EOF, None, line - 1))
    return tokens, errors
