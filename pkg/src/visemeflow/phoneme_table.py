"""Phoneme-group table: 20 groups of IPA symbols, one viseme each.

The default table ships with the package (``data/phoneme_groups.json``)
and can be overridden with a user file of the same schema.
"""

import json
from dataclasses import dataclass
from importlib import resources

from .errors import DataFormatError

N_GROUPS = 20


@dataclass(frozen=True)
class PhonemeGroup:
    group_id: int
    name: str
    phonemes: tuple


@dataclass(frozen=True)
class PhonemeGroupTable:
    groups: tuple

    def group_of(self, symbol: str) -> int:
        for g in self.groups:
            if symbol in g.phonemes:
                return g.group_id
        raise KeyError(f"phoneme {symbol!r} not in any group")

    def name_of(self, group_id: int) -> str:
        return self.groups[group_id].name


def _parse_table(doc: dict, source: str) -> PhonemeGroupTable:
    raw = doc.get("groups")
    if not isinstance(raw, list):
        raise DataFormatError(f"{source}: missing 'groups' list")
    if len(raw) != N_GROUPS:
        raise DataFormatError(f"{source}: expected {N_GROUPS} groups, found {len(raw)}")
    seen_ids = set()
    seen_symbols = {}
    groups = []
    for entry in raw:
        gid = entry.get("id")
        name = entry.get("name")
        phonemes = entry.get("phonemes")
        if not isinstance(gid, int) or not isinstance(name, str) or not phonemes:
            raise DataFormatError(f"{source}: malformed group entry {entry!r}")
        if gid in seen_ids:
            raise DataFormatError(f"{source}: duplicate group id {gid}")
        seen_ids.add(gid)
        for symbol in phonemes:
            if symbol in seen_symbols:
                raise DataFormatError(
                    f"{source}: phoneme {symbol!r} appears in groups "
                    f"{seen_symbols[symbol]!r} and {name!r}"
                )
            seen_symbols[symbol] = name
        groups.append(PhonemeGroup(gid, name, tuple(phonemes)))
    if seen_ids != set(range(N_GROUPS)):
        raise DataFormatError(f"{source}: group ids must cover 0..{N_GROUPS - 1}")
    groups.sort(key=lambda g: g.group_id)
    return PhonemeGroupTable(tuple(groups))


def phoneme_table_load(path=None) -> PhonemeGroupTable:
    """Load the group table; None loads the shipped default."""
    if path is None:
        text = resources.files("visemeflow.data").joinpath("phoneme_groups.json").read_text(
            encoding="utf-8"
        )
        return _parse_table(json.loads(text), "default phoneme table")
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"unreadable phoneme table {path}: {exc}") from exc
    return _parse_table(doc, str(path))
