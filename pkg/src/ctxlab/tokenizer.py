"""Byte-level tokenizer: ids 0-255 are raw UTF-8 bytes.

Ids from 256 upward are reserved for special tokens. Only ``EOS_ID`` is
defined; the harness uses it as a stop token when the model vocabulary is
large enough to emit it.
"""

from .exceptions import DecodeError

BYTE_VOCAB = 256
EOS_ID = 256
NEWLINE_ID = ord("\n")


def tokenize(text):
    return list(text.encode("utf-8"))


def detokenize(ids, errors="replace"):
    """Bytes back to text. Invalid UTF-8 (possible in model output) becomes U+FFFD by default."""
    ids = list(ids)
    for i in ids:
        if not 0 <= i < BYTE_VOCAB:
            raise DecodeError(f"token id {i} is not a byte id")
    return bytes(ids).decode("utf-8", errors=errors)
