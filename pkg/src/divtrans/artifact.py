"""Artifact headers and the text formats for hypothesis groups and attention dumps."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

from .errors import InvalidArgumentError

VERSION = "0.1.0"
HEADER_PREFIX = "# divtrans "
UNIT_SEP = "\x1f"


def config_digest(config: dict) -> str:
    """Short SHA-256 of the canonical JSON form of ``config``."""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def artifact_header(digest: str, seed: int) -> str:
    return f"{HEADER_PREFIX}{VERSION} config={digest or '-'} seed={seed}"


def parse_header(line: str) -> dict:
    if not line.startswith(HEADER_PREFIX):
        raise InvalidArgumentError("missing artifact header line")
    fields = line[len(HEADER_PREFIX):].split()
    out = {"version": fields[0]}
    for f in fields[1:]:
        k, _, v = f.partition("=")
        out[k] = v
    return out


def _strip_header(lines: list[str]) -> list[str]:
    return [ln for ln in lines if not ln.startswith("#")]


# ---------------------------------------------------------------------------
# hypothesis groups
# ---------------------------------------------------------------------------


def format_group(sentence_id: int, policy: str, outputs: Sequence[tuple[str, float]]) -> str:
    for text, _ in outputs:
        if "\t" in text or UNIT_SEP in text or "\n" in text:
            raise InvalidArgumentError("output text contains a reserved separator")
    texts = UNIT_SEP.join(t for t, _ in outputs)
    scores = UNIT_SEP.join(f"{s:.6f}" for _, s in outputs)
    return f"{sentence_id}\t{policy}\t{texts}\t{scores}"


def parse_group(line: str) -> tuple[int, str, list[tuple[str, float]]]:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 4:
        raise InvalidArgumentError(f"malformed group record: {line[:60]!r}")
    texts = parts[2].split(UNIT_SEP)
    scores = [float(s) for s in parts[3].split(UNIT_SEP)]
    if len(texts) != len(scores):
        raise InvalidArgumentError("output and score counts differ")
    return int(parts[0]), parts[1], list(zip(texts, scores))


def write_groups(path, header: str, records: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for rec in records:
            fh.write(rec + "\n")


def read_groups(path) -> list[tuple[int, str, list[tuple[str, float]]]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [parse_group(ln) for ln in _strip_header(lines) if ln]


def attention_lines(sentence_id: int, decode_index: int, attention, digits: int = 6) -> list[str]:
    """JSON lines for recorded cross-attention; ``attention`` is a list of ``[L, H, S]`` arrays."""
    out = []
    for step, arr in enumerate(attention):
        for layer, heads in enumerate(arr):
            rows = [[round(float(x), digits) for x in row] for row in heads]
            out.append(json.dumps({"sentence_id": sentence_id, "decode_index": decode_index, "step": step,
                                   "layer": layer, "weights": rows}, separators=(",", ":")))
    return out
