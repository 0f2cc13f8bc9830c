"""Raw-text perturbation: synonym/antonym substitution plus character noise.

Texts are split on Unicode whitespace; trailing punctuation is detached
before lookup and reattached afterwards, so token count and separators
survive the round trip. A position is a substitution candidate when its
stripped core is alphabetic, at least three characters long, and the
lexical cache lists at least one alternative of the requested type.
"""

from __future__ import annotations

import json
import re
import string
import unicodedata
from pathlib import Path

from .rng import Rng

SYNONYM = "synonym"
ANTONYM = "antonym"
_TYPES = (SYNONYM, ANTONYM)
_TYPE_KEY = {SYNONYM: "syn", ANTONYM: "ant"}

_WS_SPLIT = re.compile(r"(\s+)")
_ASCII_LOWER = string.ascii_lowercase


class LexicalCache:
    """Word -> {synonyms, antonyms} map loaded from JSON.

    Keys are lowercase; a word never lists itself as its own alternative.
    """

    def __init__(self, entries: dict[str, dict]):
        self._entries: dict[str, dict[str, list[str]]] = {}
        for word, alts in entries.items():
            w = str(word).lower()
            # multi-token alternatives would break the token-count contract
            syn = [str(s) for s in alts.get("syn", [])
                   if str(s).lower() != w and not _WS_SPLIT.search(str(s))]
            ant = [str(s) for s in alts.get("ant", [])
                   if str(s).lower() != w and not _WS_SPLIT.search(str(s))]
            self._entries[w] = {"syn": syn, "ant": ant}

    def alternatives(self, word: str, type_: str) -> list[str]:
        entry = self._entries.get(word.lower())
        if entry is None:
            return []
        return entry[_TYPE_KEY[type_]]

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, word: str) -> bool:
        return word.lower() in self._entries

    def to_dict(self) -> dict:
        return {w: {"syn": list(e["syn"]), "ant": list(e["ant"])}
                for w, e in sorted(self._entries.items())}

    @classmethod
    def load(cls, path: Path) -> "LexicalCache":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def save(self, path: Path) -> None:
        from .dataio import write_json
        write_json(Path(path), self.to_dict())


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _strip_trailing_punct(token: str) -> tuple[str, str]:
    """Split a token into (core, trailing punctuation)."""
    end = len(token)
    while end > 0 and _is_punct(token[end - 1]):
        end -= 1
    return token[:end], token[end:]


def char_edit(w: str, rng: Rng) -> str:
    """One random character edit: insert, delete, replace, or adjacent swap.

    Delete and swap need at least two characters and otherwise leave the
    word unchanged; replace always draws a character different from the
    original.
    """
    if not w:
        raise ValueError("char_edit: empty word")
    op = ("ins", "del", "replace", "swap")[int(rng.integers(4))]
    pos = int(rng.integers(len(w)))
    if op == "ins":
        c = _ASCII_LOWER[int(rng.integers(26))]
        return w[:pos] + c + w[pos:]
    if op == "del" and len(w) > 1:
        return w[:pos] + w[pos + 1:]
    if op == "replace":
        c = w[pos]
        while c == w[pos]:
            c = _ASCII_LOWER[int(rng.integers(26))]
        return w[:pos] + c + w[pos + 1:]
    if op == "swap" and len(w) > 1:
        pos = min(pos, len(w) - 2)
        return w[:pos] + w[pos + 1] + w[pos] + w[pos + 2:]
    return w


def _match_case(replacement: str, original: str) -> str:
    if original[:1].isupper():
        return replacement[:1].upper() + replacement[1:]
    return replacement


def text_augment(t: str, type_: str, alpha_text: float, p_char: float,
                 cache: LexicalCache, rng: Rng) -> str:
    """Replace a controlled fraction of cache-covered words, then add noise.

    floor(alpha_text * #candidates) positions are drawn uniformly without
    replacement and processed left to right; each replaced word then
    independently receives one character edit with probability p_char.
    Words without a cache entry are silently skipped; alpha_text = 0 is a
    byte-for-byte identity.
    """
    if type_ not in _TYPES:
        raise ValueError(f"text_augment: type must be one of {_TYPES}, got {type_!r}")
    if not (0.0 <= alpha_text <= 1.0 and 0.0 <= p_char <= 1.0):
        raise ValueError(f"text_augment: alpha_text={alpha_text}, p_char={p_char} "
                         "must lie in [0, 1]")
    pieces = _WS_SPLIT.split(t)
    candidates = []
    for k in range(0, len(pieces), 2):  # even indices hold the words
        core, _ = _strip_trailing_punct(pieces[k])
        if len(core) >= 3 and core.isalpha() and cache.alternatives(core, type_):
            candidates.append(k)
    n_repl = int(alpha_text * len(candidates))
    if n_repl == 0:
        return t
    chosen = sorted(rng.choice(len(candidates), size=n_repl, replace=False).tolist())
    for ci in chosen:
        k = candidates[ci]
        core, tail = _strip_trailing_punct(pieces[k])
        alts = cache.alternatives(core, type_)
        word = _match_case(alts[int(rng.integers(len(alts)))], core)
        if rng.random() < p_char:
            word = char_edit(word, rng)
        pieces[k] = word + tail
    return "".join(pieces)
