"""Supported caption languages.

English plus the nine translation targets the datastore tooling knows how
to produce. Adding a language requires a translation table for it and a
tokenizer rule entry in :mod:`skycap.metrics`.
"""

from __future__ import annotations

from .errors import UnsupportedLanguageError

LANGUAGE_NAMES: dict[str, str] = {
    "en": "English",
    "pt": "Portuguese",
    "es": "Spanish",
    "fr": "French",
    "de": "German",
    "nl": "Dutch",
    "it": "Italian",
    "zh": "Chinese",
    "ko": "Korean",
    "ru": "Russian",
}

SUPPORTED_LANGUAGES = frozenset(LANGUAGE_NAMES)

# Languages tokenized character-by-character instead of by 13a-style rules.
CHARACTER_TOKENIZED = frozenset({"zh", "ko"})


def language_name(code: str) -> str:
    """Return the English name for a language code, e.g. ``"pt"`` -> ``"Portuguese"``."""
    try:
        return LANGUAGE_NAMES[code]
    except KeyError:
        raise UnsupportedLanguageError(f"unsupported language code: {code!r}") from None


def check_language(code: str) -> str:
    if code not in SUPPORTED_LANGUAGES:
        raise UnsupportedLanguageError(f"unsupported language code: {code!r}")
    return code
