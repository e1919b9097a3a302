"""Reasoning-language verification: did the model actually think in the
requested language?

The bundled detector is deliberately lightweight. Languages written in a
distinctive script (Chinese, Japanese, Korean, Thai, Hindi, Bengali, Arabic,
Russian) are identified by Unicode code-point ranges; the Latin-script
languages are separated by stopword frequency profiles. A heavier external
classifier can be plugged in through the ``detector`` callable.
"""

from __future__ import annotations

from typing import Callable

from .languages import Language, canonical_index


class DetectionError(RuntimeError):
    """The detector could not reach a decision (distinct from a mismatch)."""


# Code-point ranges per distinctive script. Kana is kept separate from the
# shared CJK-ideograph block so Japanese (kana present) and Chinese
# (ideographs only) can be told apart.
_KANA = ((0x3040, 0x309F), (0x30A0, 0x30FF), (0xFF66, 0xFF9D))
_SCRIPT_RANGES: dict[Language, tuple[tuple[int, int], ...]] = {
    Language.CHINESE: ((0x4E00, 0x9FFF), (0x3400, 0x4DBF), (0xF900, 0xFAFF)),
    Language.JAPANESE: _KANA,
    Language.KOREAN: ((0xAC00, 0xD7AF), (0x1100, 0x11FF), (0x3130, 0x318F)),
    Language.THAI: ((0x0E00, 0x0E7F),),
    Language.HINDI: ((0x0900, 0x097F),),
    Language.BENGALI: ((0x0980, 0x09FF),),
    Language.ARABIC: ((0x0600, 0x06FF), (0x0750, 0x077F), (0x08A0, 0x08FF), (0xFB50, 0xFDFF)),
    Language.RUSSIAN: ((0x0400, 0x04FF), (0x0500, 0x052F)),
}

SCRIPT_LANGUAGES = frozenset(_SCRIPT_RANGES)

_STOPWORDS: dict[Language, frozenset[str]] = {
    Language.ENGLISH: frozenset(
        "the and is of to in that it was for with are this have from not but they".split()
    ),
    Language.FRENCH: frozenset(
        "le la les des et est dans que pour une un du avec sur pas ne ce qui".split()
    ),
    Language.GERMAN: frozenset(
        "der die das und ist nicht mit ein eine zu den von für auf im sich auch".split()
    ),
    Language.ITALIAN: frozenset(
        "il lo la gli di che è per una con non sono della nel più questo anche".split()
    ),
    Language.PORTUGUESE: frozenset(
        "o os as de que é em uma um com para do da não se mais como também".split()
    ),
    Language.SPANISH: frozenset(
        "el los las de que es en por una un con para del no se más como esta".split()
    ),
    Language.TURKISH: frozenset(
        "ve bir bu için ile olarak daha çok en gibi ama sonra değil çünkü olan ben".split()
    ),
    Language.VIETNAMESE: frozenset(
        "và của là có không được trong cho với một này người khi đã các những".split()
    ),
}


def _script_counts(text: str) -> dict[Language, int]:
    counts: dict[Language, int] = {}
    for ch in text:
        cp = ord(ch)
        for language, ranges in _SCRIPT_RANGES.items():
            if any(lo <= cp <= hi for lo, hi in ranges):
                counts[language] = counts.get(language, 0) + 1
                break
    return counts


def _tokens(text: str) -> list[str]:
    tokens: list[str] = []
    current: list[str] = []
    for ch in text.casefold():
        if ch.isalpha():
            current.append(ch)
        elif current:
            tokens.append("".join(current))
            current = []
    if current:
        tokens.append("".join(current))
    return tokens


def detect_language(text: str) -> Language:
    """Best-guess language of ``text``; raises DetectionError on no signal."""
    if not text or not text.strip():
        raise DetectionError("empty text")
    counts = _script_counts(text)
    if counts:
        if counts.get(Language.JAPANESE, 0) > 0:
            # Japanese prose mixes kana with CJK ideographs; kana decides.
            return Language.JAPANESE
        return max(counts, key=lambda lang: (counts[lang], -canonical_index(lang)))
    tokens = _tokens(text)
    if not tokens:
        raise DetectionError("no alphabetic content to classify")
    scores = {lang: sum(1 for t in tokens if t in words) for lang, words in _STOPWORDS.items()}
    best = max(scores, key=lambda lang: (scores[lang], -canonical_index(lang)))
    if scores[best] == 0:
        raise DetectionError("no stopword signal for any Latin-script language")
    return best


Detector = Callable[[str], Language]


def verify_output_language(
    reasoning_text: str,
    expected: Language,
    detector: Detector | None = None,
) -> bool:
    """True when the detector attributes the reasoning text to ``expected``."""
    if not reasoning_text:
        raise ValueError("reasoning_text must be non-empty")
    detect = detector or detect_language
    return detect(reasoning_text) == expected
