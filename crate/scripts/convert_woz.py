#!/usr/bin/env python3
"""Convert WOZ 2.0 (`woz_{train,validate,test}_en.json`) into statenet corpus files.

    python3 scripts/convert_woz.py --data woz --out data/woz

Each turn becomes one hypothesis with score 1.0 holding the typed user
utterance. The gold goal is the `inform` part of the turn's belief state,
which is already accumulated over the dialogue. System acts are either a
requested slot name or a `[slot, value]` pair, the latter read as `confirm`.
"""

import argparse
import json
import os
import sys

SPLITS = {"train": "woz_train_en.json", "valid": "woz_validate_en.json", "test": "woz_test_en.json"}
DEFAULT_SLOTS = ("food", "price range", "area")


def slot_key(slot):
    return slot.replace(" ", "")


def machine_acts(system_acts):
    acts = []
    for act in system_acts:
        if isinstance(act, str):
            acts.append({"type": "request", "slot": slot_key(act)})
        else:
            slot, value = act
            acts.append({"type": "confirm", "slot": slot_key(slot), "value": value.lower()})
    return acts


def goal(belief_state, slots):
    out = {}
    for entry in belief_state:
        if entry.get("act") != "inform":
            continue
        for slot, value in entry["slots"]:
            if slot in slots:
                out[slot_key(slot)] = value.lower()
    return out


def convert(dialogue, slots):
    turns = []
    for turn in dialogue["dialogue"]:
        text = turn["transcript"].strip() or "<silence>"
        turns.append(
            {
                "asr": [{"text": text, "score": 1.0}],
                "acts": machine_acts(turn.get("system_acts", [])),
                "goal": goal(turn.get("belief_state", []), slots),
            }
        )
    return {"id": str(dialogue["dialogue_idx"]), "turns": turns}


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--data", required=True, help="directory holding the woz_*_en.json files")
    parser.add_argument("--out", required=True)
    parser.add_argument("--slots", default=",".join(DEFAULT_SLOTS))
    args = parser.parse_args()

    slots = [s for s in args.slots.split(",") if s]
    ontology = {slot_key(s): ["none", "dontcare"] for s in slots}
    os.makedirs(args.out, exist_ok=True)
    for split, name in SPLITS.items():
        with open(os.path.join(args.data, name)) as f:
            raw = json.load(f)
        dialogues = [convert(d, slots) for d in raw]
        for dialogue in dialogues:
            for turn in dialogue["turns"]:
                for slot, value in turn["goal"].items():
                    if value not in ontology[slot]:
                        ontology[slot].append(value)
        with open(os.path.join(args.out, split + ".json"), "w") as f:
            json.dump({"dialogues": dialogues}, f)
        print(f"{split}: {len(dialogues)} dialogues", file=sys.stderr)
    with open(os.path.join(args.out, "ontology.json"), "w") as f:
        json.dump(ontology, f, indent=1)


if __name__ == "__main__":
    main()
