"""The punctuation class shared by the tokenizer and answer normalization.

A character is punctuation when it is one of the 32 ASCII characters

    ! " # $ % & ' ( ) * + , - . / : ; < = > ? @ [ \\ ] ^ _ ` { | } ~

(the class the official SQuAD scorer strips) or when its Unicode general
category is one of Pc, Pd, Ps, Pe, Pi, Pf, Po.
"""

import string
import unicodedata

ASCII_PUNCTUATION = frozenset(string.punctuation)
UNICODE_PUNCTUATION_CATEGORIES = frozenset(("Pc", "Pd", "Ps", "Pe", "Pi", "Pf", "Po"))


def is_punctuation(ch: str) -> bool:
    return ch in ASCII_PUNCTUATION or unicodedata.category(ch) in UNICODE_PUNCTUATION_CATEGORIES
