"""Small text helpers shared by the pipeline stages."""

from __future__ import annotations

_TERMINALS = ".!?"


def split_sentences(text: str) -> list[str]:
    """Split on ``.``, ``!``, ``?`` boundaries that are not inside numbers.

    A period flanked by digits (``"3.5 baths"``) does not end a sentence.
    Whitespace-only fragments are dropped.
    """
    sentences: list[str] = []
    current: list[str] = []
    for i, ch in enumerate(text):
        current.append(ch)
        if ch in _TERMINALS:
            prev = text[i - 1] if i > 0 else ""
            nxt = text[i + 1] if i + 1 < len(text) else ""
            if ch == "." and prev.isdigit() and nxt.isdigit():
                continue
            fragment = "".join(current).strip()
            if fragment:
                sentences.append(fragment)
            current = []
    tail = "".join(current).strip()
    if tail:
        sentences.append(tail)
    return sentences


def is_single_sentence(text: str) -> bool:
    stripped = text.strip()
    return bool(stripped) and stripped[-1] in _TERMINALS and len(split_sentences(stripped)) == 1


def first_sentence(text: str) -> str:
    sentences = split_sentences(text)
    if not sentences:
        return ""
    head = sentences[0]
    return head if head[-1] in _TERMINALS else head + "."
