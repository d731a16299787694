#!/usr/bin/env python3
"""Convert MultiWOZ 2.2 dialogue files into the ctxprompt corpus JSON.

Usage:
    multiwoz22_to_corpus.py --split test data/test/dialogues_001.json -o test.json
    multiwoz22_to_corpus.py --split auto data/*/dialogues_*.json -o corpus.json

With `--split auto` the split is taken from the parent directory name
(train, dev or test). Output is deterministic: dialogs are sorted by id.

Mapping:
  * consecutive USER/SYSTEM turns become one corpus turn; a trailing user
    turn with no system reply is dropped
  * the state after a turn is the union of every frame's `slot_values`
    (`restaurant-food: ["italian"]` -> state.restaurant.food = "italian",
    first value wins); slots are never dropped, so states are cumulative
  * text is lowercased and whitespace-normalized
  * system utterances are delexicalized from their span annotations:
    `restaurant-name` over "pizza hut" -> `[name]`; slots outside
    PLACEHOLDERS keep their surface text
  * goal.constraints is the final state; goal.requested collects every
    `requested_slots` entry of the user frames
"""

import argparse
import json
import sys
from pathlib import Path

# keep in sync with BASE_PLACEHOLDERS + SCHEMALESS_PLACEHOLDERS
PLACEHOLDERS = {
    "name", "ref", "choice", "food", "pricerange", "area", "bookday",
    "booktime", "bookpeople", "trainid", "departure", "destination",
    "leaveat", "arriveby", "price", "duration", "stars", "type",
    "address", "phone", "postcode", "bookstay", "entrancefee", "openhours",
}

SPLITS = {"train", "dev", "test"}


class ConversionError(Exception):
    pass


def split_slot(key):
    if "-" not in key:
        raise ConversionError(f"slot {key!r} is not domain-slot")
    domain, slot = key.split("-", 1)
    return domain, slot


def delexicalize(utterance, frames):
    spans = []
    for frame in frames:
        for s in frame.get("slots", []):
            if "start" not in s or "exclusive_end" not in s:
                continue
            _, slot = split_slot(s["slot"])
            if slot in PLACEHOLDERS:
                spans.append((s["start"], s["exclusive_end"], f"[{slot}]"))
    spans.sort()
    out, cursor = [], 0
    for start, end, ph in spans:
        if start < cursor:
            continue  # overlapping annotation; keep the first
        out.append(utterance[cursor:start])
        out.append(f" {ph} ")
        cursor = end
    out.append(utterance[cursor:])
    return " ".join("".join(out).lower().split())


def convert_dialog(d, split):
    did = d["dialogue_id"]
    turns = d.get("turns", [])
    state = {}
    requested = {}
    out = []
    i = 0
    while i + 1 < len(turns):
        user, system = turns[i], turns[i + 1]
        if user.get("speaker") != "USER" or system.get("speaker") != "SYSTEM":
            raise ConversionError(f"{did}: turn {i} is not a USER/SYSTEM pair")
        for frame in user.get("frames", []):
            st = frame.get("state") or {}
            for key, values in sorted((st.get("slot_values") or {}).items()):
                if not values:
                    continue
                domain, slot = split_slot(key)
                state.setdefault(domain, {})[slot] = values[0]
            for key in st.get("requested_slots") or []:
                domain, slot = split_slot(key)
                requested.setdefault(domain, set()).add(slot)
        out.append({
            "user": " ".join(user["utterance"].lower().split()),
            "system": delexicalize(system["utterance"], system.get("frames", [])),
            "state": {dom: dict(slots) for dom, slots in state.items()},
        })
        i += 2
    if not out:
        raise ConversionError(f"{did}: no complete user/system turn")
    return {
        "id": did,
        "split": split,
        "turns": out,
        "goal": {
            "constraints": {dom: dict(slots) for dom, slots in state.items()},
            "requested": {dom: sorted(s) for dom, s in requested.items()},
            "target_entity": "",
        },
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("inputs", nargs="+", type=Path)
    ap.add_argument("-o", "--out", type=Path, required=True)
    ap.add_argument("--split", default="auto", choices=sorted(SPLITS | {"auto"}))
    args = ap.parse_args(argv)

    dialogs = []
    for path in args.inputs:
        split = args.split
        if split == "auto":
            split = path.parent.name
            if split not in SPLITS:
                print(f"error: cannot infer split from {path}", file=sys.stderr)
                return 1
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            dialogs.extend(convert_dialog(d, split) for d in data)
        except (OSError, ValueError, KeyError, ConversionError) as e:
            print(f"error: {path}: {e}", file=sys.stderr)
            return 1
    dialogs.sort(key=lambda d: d["id"])
    args.out.write_text(json.dumps({"dialogs": dialogs}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


if __name__ == "__main__":
    sys.exit(main())
