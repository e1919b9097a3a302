"""Candidate language set and the canonical ordering used for all tie-breaking.

The default candidate set has exactly 16 members. The canonical order puts
English first, then the remaining languages in a fixed listing order; every
deterministic tie-break in this package (majority votes, argmax over language
accuracies, oracle language reporting) resolves by this order.
"""

from __future__ import annotations

from enum import Enum
from typing import Iterable


class UnknownLanguageError(ValueError):
    """Raised when a string is not one of the 16 supported language codes."""


class Language(str, Enum):
    ARABIC = "ar"
    BENGALI = "bn"
    CHINESE = "zh"
    ENGLISH = "en"
    FRENCH = "fr"
    GERMAN = "de"
    HINDI = "hi"
    ITALIAN = "it"
    JAPANESE = "ja"
    KOREAN = "ko"
    PORTUGUESE = "pt"
    RUSSIAN = "ru"
    SPANISH = "es"
    THAI = "th"
    TURKISH = "tr"
    VIETNAMESE = "vi"

    def __str__(self) -> str:  # "en" rather than "Language.ENGLISH"
        return self.value

    @property
    def english_name(self) -> str:
        return ENGLISH_NAMES[self]


# English first, then the fixed listing order. Index in this tuple is the
# tie-break priority (lower wins).
CANONICAL_ORDER: tuple[Language, ...] = (
    Language.ENGLISH,
    Language.ARABIC,
    Language.BENGALI,
    Language.CHINESE,
    Language.FRENCH,
    Language.GERMAN,
    Language.HINDI,
    Language.ITALIAN,
    Language.JAPANESE,
    Language.KOREAN,
    Language.PORTUGUESE,
    Language.RUSSIAN,
    Language.SPANISH,
    Language.THAI,
    Language.TURKISH,
    Language.VIETNAMESE,
)

DEFAULT_LANGUAGES: tuple[Language, ...] = CANONICAL_ORDER

ENGLISH_NAMES: dict[Language, str] = {
    Language.ARABIC: "Arabic",
    Language.BENGALI: "Bengali",
    Language.CHINESE: "Chinese",
    Language.ENGLISH: "English",
    Language.FRENCH: "French",
    Language.GERMAN: "German",
    Language.HINDI: "Hindi",
    Language.ITALIAN: "Italian",
    Language.JAPANESE: "Japanese",
    Language.KOREAN: "Korean",
    Language.PORTUGUESE: "Portuguese",
    Language.RUSSIAN: "Russian",
    Language.SPANISH: "Spanish",
    Language.THAI: "Thai",
    Language.TURKISH: "Turkish",
    Language.VIETNAMESE: "Vietnamese",
}

_BY_ENGLISH_NAME = {name.casefold(): lang for lang, name in ENGLISH_NAMES.items()}
_CANONICAL_INDEX = {lang: i for i, lang in enumerate(CANONICAL_ORDER)}


def parse_language(code: str) -> Language:
    """Parse a two-letter code into a Language; anything else is an error."""
    try:
        return Language(code)
    except ValueError:
        raise UnknownLanguageError(f"unknown language code: {code!r}") from None


def language_from_english_name(name: str) -> Language | None:
    """Map an English language name (case-insensitive) to a Language, or None."""
    return _BY_ENGLISH_NAME.get(name.strip().casefold())


def canonical_index(language: Language) -> int:
    return _CANONICAL_INDEX[language]


def canonical_sorted(languages: Iterable[Language]) -> list[Language]:
    """Sort languages by canonical priority (English first)."""
    return sorted(languages, key=canonical_index)
