"""Quote-aware shell command lexer and rule-based utility extraction.

The extractor here is the labeling oracle for the synthetic corpus and also
serves as a baseline inference backend.  It understands just enough shell to
find the executable at the head of every command segment:

* segments are split on unquoted ``;``, ``&&``, ``||``, ``|`` and newlines
* single quotes, double quotes, backslash escapes, ``$(...)`` and backticks
  suppress splitting (substitutions are kept as opaque arguments)
* leading ``NAME=value`` assignments and redirections are skipped
* wrapper prefixes (``sudo``, ``busybox`` ...) yield the wrapper *and* the
  wrapped utility
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

SEPARATORS = (";", "&&", "||", "|")
WRAPPER_PREFIXES = frozenset({"sudo", "nohup", "busybox", "time", "exec", "env"})

_REDIRECT_RE = re.compile(r"^\d*(?:&>>?|>\||>>?&?|<<?&?)(.*)$")


class UnterminatedQuote(ValueError):
    """Raised in strict mode when a quote or substitution is never closed."""


@dataclass(frozen=True)
class Segment:
    tokens: Tuple[str, ...]
    separator_before: Optional[str] = None
    unterminated: bool = False

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


def _scan(text: str, split_ops: bool) -> Iterator[Tuple[str, str]]:
    """Yield ``("tok", token)`` and ``("sep", op)`` items, then ``("end", flag)``.

    ``flag`` is ``"unterminated"`` when input ended inside a quote or
    substitution, otherwise ``""``.
    """
    buf: List[str] = []
    quote: Optional[str] = None  # "'", '"' or "`"
    depth = 0  # nesting of $( ... )
    i, n = 0, len(text)

    def flush() -> Iterator[Tuple[str, str]]:
        if buf:
            yield "tok", "".join(buf)
            buf.clear()

    while i < n:
        ch = text[i]
        if quote == "'":
            buf.append(ch)
            if ch == "'":
                quote = None
            i += 1
            continue
        if ch == "\\" and quote != "'":
            buf.append(text[i : i + 2])
            i += 2
            continue
        if quote is not None:
            buf.append(ch)
            if ch == quote:
                quote = None
            i += 1
            continue
        if ch in "'\"`":
            quote = ch
            buf.append(ch)
            i += 1
            continue
        if text.startswith("$(", i):
            depth += 1
            buf.append("$(")
            i += 2
            continue
        if depth:
            buf.append(ch)
            if ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
            i += 1
            continue
        if split_ops:
            if ch == "\n":
                yield from flush()
                yield "sep", ";"
                i += 1
                continue
            op = next(
                (s for s in ("&&", "||") if text.startswith(s, i)),
                None,
            )
            if op is None and ch in ";|":
                # "2>|" style clobber redirect is not a pipe
                if ch == "|" and buf and buf[-1] == ">":
                    buf.append(ch)
                    i += 1
                    continue
                op = ch
            if op is not None:
                yield from flush()
                yield "sep", op
                i += len(op)
                continue
        if ch.isspace():
            yield from flush()
            i += 1
            continue
        buf.append(ch)
        i += 1

    yield from flush()
    yield "end", "unterminated" if (quote is not None or depth) else ""


def segment(command: str, strict: bool = False) -> List[Segment]:
    """Split a command line into segments on unquoted shell separators.

    Empty segments (``"a;;b"``, trailing ``;``) are dropped.  An unclosed quote
    swallows the rest of the line; in strict mode it raises instead.
    """
    segments: List[Segment] = []
    tokens: List[str] = []
    sep: Optional[str] = None
    for kind, value in _scan(command, split_ops=True):
        if kind == "tok":
            tokens.append(value)
        elif kind == "sep":
            if tokens:
                segments.append(Segment(tuple(tokens), sep))
                tokens = []
            sep = value
        else:
            if value and strict:
                raise UnterminatedQuote(command)
            if tokens:
                segments.append(Segment(tuple(tokens), sep, unterminated=bool(value)))
            elif value and segments:
                last = segments[-1]
                segments[-1] = Segment(last.tokens, last.separator_before, True)
    if segments and segments[0].separator_before is not None:
        first = segments[0]
        segments[0] = Segment(first.tokens, None, first.unterminated)
    return segments


def tokenize(segment_text: str, strict: bool = False) -> List[str]:
    """Whitespace-split outside quotes; quote characters stay in the tokens."""
    tokens: List[str] = []
    for kind, value in _scan(segment_text, split_ops=False):
        if kind == "tok":
            tokens.append(value)
        elif kind == "end" and value and strict:
            raise UnterminatedQuote(segment_text)
    return tokens


def is_assignment(token: str) -> bool:
    return "=" in token and not token.startswith("-") and not is_redirection(token)


def is_redirection(token: str) -> bool:
    return _REDIRECT_RE.match(token) is not None


def is_flag(token: str) -> bool:
    return token.startswith("-") and len(token) > 1


def utility_name(token: str) -> str:
    """Basename of a token with quoting removed; may be empty."""
    bare = token.replace("\\", "").replace("'", "").replace('"', "")
    return bare.rstrip("/").rsplit("/", 1)[-1]


def _is_opaque(token: str) -> bool:
    return token.startswith("$(") or token.startswith("`")


def segment_heads(tokens: Tuple[str, ...] | List[str]) -> List[Tuple[int, str]]:
    """Return ``(token_index, utility)`` pairs for one segment, wrapper-aware."""
    heads: List[Tuple[int, str]] = []
    i, n = 0, len(tokens)
    while i < n:
        tok = tokens[i]
        if is_redirection(tok):
            # bare operator ("> file") consumes its target
            i += 2 if _REDIRECT_RE.match(tok).group(1) == "" else 1
            continue
        if is_flag(tok) or (not heads and is_assignment(tok)):
            i += 1
            continue
        if heads and is_assignment(tok) and heads[-1][1] == "env":
            i += 1
            continue
        if _is_opaque(tok):
            break
        name = utility_name(tok)
        if not name:
            break
        heads.append((i, name))
        if name not in WRAPPER_PREFIXES:
            break
        i += 1
    return heads


def extract_utilities(command: str) -> List[str]:
    """Ordered utility names, one or more per segment.

    >>> extract_utilities("cd /tmp && /usr/bin/wget http://e/x; chmod +x x")
    ['cd', 'wget', 'chmod']
    """
    out: List[str] = []
    for seg in segment(command):
        out.extend(name for _, name in segment_heads(seg.tokens))
    return out


def label(command: str) -> str:
    """Gold answer text: utilities joined by single spaces."""
    return " ".join(extract_utilities(command))
