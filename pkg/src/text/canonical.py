"""
Stage 1 of entity sanitization: surface form -> canonical key.

    NFKC -> casefold -> punctuation to space -> collapse whitespace -> trim

Punctuation is every code point whose Unicode category starts with "P"
(hyphens and apostrophes included, so "Jay-Z" -> "jay z"). Digits and
symbols are kept.
"""

import re
import unicodedata

_SPACES = re.compile(r"\s+")

# A single pass can leave a string that NFKC changes again after casefolding;
# iterate to a fixed point so the function is idempotent.
_MAX_PASSES = 4


def _strip_punctuation(s: str) -> str:
    return "".join(" " if unicodedata.category(ch).startswith("P") else ch for ch in s)


def _single_pass(s: str) -> str:
    s = unicodedata.normalize("NFKC", s)
    s = s.casefold()
    s = _strip_punctuation(s)
    return _SPACES.sub(" ", s).strip()


def canonicalize(name: str) -> str:
    """
    Map a display name to its canonical key.

    An empty result means the input held nothing but punctuation/whitespace;
    callers must treat such a name as unusable (see is_usable_key).

    Example:
        >>> canonicalize("John F. Kennedy")
        'john f kennedy'
    """
    current = _single_pass(name)
    for _ in range(_MAX_PASSES):
        nxt = _single_pass(current)
        if nxt == current:
            break
        current = nxt
    return current


def is_usable_key(key: str) -> bool:
    return bool(key)


__all__ = ["canonicalize", "is_usable_key"]
