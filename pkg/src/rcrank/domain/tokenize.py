"""SQL tokenizer and vocabulary.

Keywords and identifiers are lowercased, identifiers split on underscores,
numeric literals collapse to ``NUM`` and string literals to ``STR``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import InvalidInput

PAD, UNK, MASK, NUM, STR = "[PAD]", "[UNK]", "[MASK]", "[NUM]", "[STR]"
SPECIALS = (PAD, UNK, MASK, NUM, STR)
PAD_ID, UNK_ID, MASK_ID, NUM_ID, STR_ID = range(5)

KEYWORDS = tuple(
    """select from where and or not in exists join inner left right outer full cross on
    group by order having limit offset as distinct union all insert into values update set
    delete create index table analyze with case when then else end is null like between
    asc desc count sum avg min max over partition""".split()
)
PUNCTUATION = ("<=", ">=", "<>", "!=", "=", "<", ">", "(", ")", ",", ".", ";", "*", "+", "-", "/", "%")

DEFAULT_MAX_LEN = 128

_TOKEN_RE = re.compile(
    r"(?P<num>\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)"
    r"|(?P<str>'(?:[^']|'')*')"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op><=|>=|<>|!=|[-+*/%=<>(),.;])"
    r"|(?P<other>\S)"
)


@dataclass(frozen=True)
class TokenSeq:
    ids: tuple
    texts: tuple
    truncated: bool = False

    def __len__(self):
        return len(self.ids)


class Vocabulary:
    def __init__(self, pieces=()):
        self.itos = list(SPECIALS) + list(KEYWORDS) + list(PUNCTUATION)
        seen = set(self.itos)
        for p in pieces:
            if p not in seen:
                self.itos.append(p)
                seen.add(p)
        self.stoi = {s: i for i, s in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def __contains__(self, piece):
        return piece in self.stoi

    def id(self, piece):
        return self.stoi.get(piece, UNK_ID)

    def identifier_pieces(self):
        start = len(SPECIALS) + len(KEYWORDS) + len(PUNCTUATION)
        return self.itos[start:]

    def to_dict(self):
        return {"pieces": self.identifier_pieces()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["pieces"])

    @classmethod
    def build(cls, texts, extra=()):
        """Collect identifier pieces from SQL texts (plus ``extra`` names), sorted."""
        pieces = set()
        for text in texts:
            for kind, raw in _scan(text):
                if kind == "ident":
                    pieces.update(p for p in split_identifier(raw) if p not in KEYWORDS)
        for name in extra:
            pieces.update(split_identifier(name))
        return cls(sorted(pieces))


def split_identifier(name):
    return [p for p in name.lower().split("_") if p]


def _scan(text):
    for m in _TOKEN_RE.finditer(text):
        yield m.lastgroup, m.group()


def tokenize_sql(text, vocab, max_len=DEFAULT_MAX_LEN):
    if not text or not text.strip():
        raise InvalidInput("empty SQL text")
    ids, texts = [], []
    for kind, raw in _scan(text):
        if kind == "num":
            ids.append(NUM_ID)
            texts.append(raw)
        elif kind == "str":
            ids.append(STR_ID)
            texts.append(raw)
        elif kind == "ident":
            low = raw.lower()
            if low in KEYWORDS:
                ids.append(vocab.id(low))
                texts.append(low)
                continue
            for piece in split_identifier(raw):
                ids.append(vocab.id(piece))
                texts.append(piece)
        elif kind == "op":
            ids.append(vocab.id(raw))
            texts.append(raw)
        else:
            ids.append(UNK_ID)
            texts.append(raw)
    if not ids:
        raise InvalidInput(f"no tokens in SQL text {text!r}")
    truncated = len(ids) > max_len
    return TokenSeq(tuple(ids[:max_len]), tuple(texts[:max_len]), truncated)


def detokenize(seq):
    return " ".join(seq.texts)


def lexeme_spans(text, max_len=DEFAULT_MAX_LEN):
    """(kind, lowercased lexeme, first token index, end index) per lexeme.

    Token indices match :func:`tokenize_sql`; lexemes cut by truncation are dropped.
    """
    out, pos = [], 0
    for kind, raw in _scan(text):
        low = raw.lower()
        if kind == "ident" and low not in KEYWORDS:
            width = len(split_identifier(raw))
        else:
            width = 1
            if kind == "ident":
                kind = "keyword"
        if width == 0:
            continue
        if pos + width > max_len:
            break
        out.append((kind, low, pos, pos + width))
        pos += width
    return out
