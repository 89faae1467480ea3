#!/usr/bin/env python3
"""Convert the DSTC2 release into statenet corpus files.

Input is the unpacked `dstc2_traindev` and `dstc2_test` archives plus the
`scripts/config` directory that ships with them (file lists and ontology).
Output is `train.json`, `valid.json`, `test.json` and `ontology.json` in the
chosen directory.

    python3 scripts/convert_dstc2.py \
        --data dstc2/data --config dstc2/scripts/config --out data/dstc2

Gold labels are the `goal-labels` of each turn, which DSTC2 already
accumulates over the dialogue. ASR scores are log probabilities and are
exponentiated; statenet renormalises them after m-best truncation.
"""

import argparse
import json
import math
import os
import sys

SPLITS = {"train": "dstc2_train.flist", "valid": "dstc2_dev.flist", "test": "dstc2_test.flist"}
DEFAULT_SLOTS = ("food", "pricerange", "area")


def machine_acts(dialog_acts):
    acts = []
    for act in dialog_acts:
        pairs = act.get("slots") or []
        if not pairs:
            acts.append({"type": act["act"]})
            continue
        for slot, value in pairs:
            # `request` carries the requested slot as its value.
            if slot == "slot":
                acts.append({"type": act["act"], "slot": str(value)})
            elif value is None:
                acts.append({"type": act["act"], "slot": slot})
            else:
                acts.append({"type": act["act"], "slot": slot, "value": str(value)})
    return acts


def hypotheses(log_turn, label_turn, use_transcript):
    if use_transcript:
        return [{"text": label_turn["transcription"], "score": 1.0}]
    hyps = []
    for hyp in log_turn["input"]["live"]["asr-hyps"]:
        score = hyp["score"]
        # Scores are log probabilities; a few releases store them as probabilities.
        prob = math.exp(score) if score <= 0 else score
        if hyp["asr-hyp"].strip():
            hyps.append({"text": hyp["asr-hyp"], "score": prob})
    if not hyps:
        hyps = [{"text": label_turn["transcription"] or "<silence>", "score": 1.0}]
    return hyps


def convert_session(session_dir, slots, use_transcript):
    with open(os.path.join(session_dir, "log.json")) as f:
        log = json.load(f)
    with open(os.path.join(session_dir, "label.json")) as f:
        label = json.load(f)
    turns = []
    for log_turn, label_turn in zip(log["turns"], label["turns"]):
        goal = {s: v for s, v in label_turn.get("goal-labels", {}).items() if s in slots}
        turns.append(
            {
                "asr": hypotheses(log_turn, label_turn, use_transcript),
                "acts": machine_acts(log_turn["output"]["dialog-acts"]),
                "goal": goal,
            }
        )
    return {"id": log["session-id"], "turns": turns}


def load_ontology(config_dir, slots):
    with open(os.path.join(config_dir, "ontology_dstc2.json")) as f:
        informable = json.load(f)["informable"]
    ontology = {}
    for slot in slots:
        values = [v.lower() for v in informable[slot]]
        ontology[slot] = ["none", "dontcare"] + [v for v in values if v not in ("none", "dontcare")]
    return ontology


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--data", required=True, help="directory holding the session folders")
    parser.add_argument("--config", required=True, help="directory holding the .flist files and ontology_dstc2.json")
    parser.add_argument("--out", required=True)
    parser.add_argument("--slots", default=",".join(DEFAULT_SLOTS))
    parser.add_argument("--transcripts", action="store_true", help="use manual transcripts instead of live ASR")
    args = parser.parse_args()

    slots = [s for s in args.slots.split(",") if s]
    ontology = load_ontology(args.config, slots)
    os.makedirs(args.out, exist_ok=True)
    for split, flist in SPLITS.items():
        with open(os.path.join(args.config, flist)) as f:
            sessions = [line.strip() for line in f if line.strip()]
        dialogues = []
        for session in sessions:
            dialogue = convert_session(os.path.join(args.data, session), slots, args.transcripts)
            for turn in dialogue["turns"]:
                for slot, value in turn["goal"].items():
                    if value not in ontology[slot]:
                        ontology[slot].append(value)
            dialogues.append(dialogue)
        with open(os.path.join(args.out, split + ".json"), "w") as f:
            json.dump({"dialogues": dialogues}, f)
        print(f"{split}: {len(dialogues)} dialogues", file=sys.stderr)
    with open(os.path.join(args.out, "ontology.json"), "w") as f:
        json.dump(ontology, f, indent=1)


if __name__ == "__main__":
    main()
