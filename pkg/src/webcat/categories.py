"""The closed 30-class content taxonomy and the OOV prediction sentinel."""

from __future__ import annotations

import enum


class Category(enum.Enum):
    CHAT = "CHAT"
    GAMES = "GAMES"
    SHOPPING = "SHOPPING"
    SPORTS = "SPORTS"
    NEWS = "NEWS"
    JOB_SEARCH = "JOB SEARCH"
    SEARCH_ENGINES = "SEARCH ENGINES"
    ALCOHOL = "ALCOHOL"
    GAMBLING = "GAMBLING"
    WEAPONS = "WEAPONS"
    PORN = "PORN"
    BANKING = "BANKING"
    BUSINESS = "BUSINESS"
    EDUCATION = "EDUCATION"
    ENTERTAINMENT = "ENTERTAINMENT"
    FOOD_AND_DINING = "FOOD AND DINING"
    GOVERNMENT = "GOVERNMENT"
    HEALTH_AND_MEDICINE = "HEALTH AND MEDICINE"
    MOTOR_VEHICLES = "MOTOR VEHICLES"
    PEER_TO_PEER = "PEER TO PEER"
    REAL_ESTATE = "REAL ESTATE"
    RELIGION = "RELIGION"
    TRAVEL = "TRAVEL"
    TRANSLATORS = "TRANSLATORS"
    COMPUTER_AND_INTERNET = "COMPUTER AND INTERNET"
    HUNTING_AND_FISHING = "HUNTING AND FISHING"
    MARIJUANA = "MARIJUANA"
    RADIO_AND_AUDIO_HOSTING = "RADIO AND AUDIO HOSTING"
    SOCIAL_NETWORKING = "SOCIAL NETWORKING"
    VIDEO_HOSTING = "VIDEO HOSTING"

    @property
    def text(self) -> str:
        return self.value

    @property
    def index(self) -> int:
        return _INDEX[self]

    @classmethod
    def from_index(cls, i: int) -> "Category":
        return _ORDER[i]

    def __str__(self) -> str:
        return self.value


class _Oov:
    """Prediction-only sentinel for generations outside the taxonomy."""

    _instance = None
    text = "OOV"
    index = len(Category)

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "OOV"

    __str__ = __repr__

    def __reduce__(self):
        return (_Oov, ())


OOV = _Oov()

_ORDER: tuple[Category, ...] = tuple(Category)
_INDEX = {c: i for i, c in enumerate(_ORDER)}
_BY_TEXT = {c.value: c for c in _ORDER}

NUM_CLASSES = len(_ORDER)
assert NUM_CLASSES == 30


def parse_category(text: str) -> Category | None:
    """Case-insensitive exact match against canonical forms after trimming.

    Returns ``None`` when ``text`` names no category; callers decide whether
    that is an error (dataset loading) or an OOV prediction (teacher output).
    """
    return _BY_TEXT.get(text.strip().upper())


def parse_prediction(text: str) -> Category | _Oov:
    cat = parse_category(text)
    return OOV if cat is None else cat
