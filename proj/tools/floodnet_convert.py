#!/usr/bin/env python3
"""Convert FloodNet VQA annotations into the instruct-icl dataset format.

Input is the FloodNet VQA JSON: an object keyed by question id whose values
carry Image_ID, Question, Ground_Truth and Question_Type. Output is JSON
Lines with one record per question.

Condition Recognition questions are split into Building/Road/Entire
Condition by the question text. The mapping tables below are the default;
pass --type-map to supply your own as JSON
({"<raw type>": "<enum>" | {"<substring>": "<enum>", ...}}).
"""

import argparse
import json
import sys
from pathlib import Path

TYPE_MAP = {
    "Simple_Counting": "SimpleCounting",
    "Complex_Counting": "ComplexCounting",
    "Density_Estimation": "DensityEstimation",
    "Risk_Assessment": "RiskAssessment",
    # Checked in order; the first substring found in the lowercased question wins.
    "Condition_Recognition": {
        "road": "RoadCondition",
        "building": "BuildingCondition",
        "": "EntireCondition",
    },
    "Yes_No": {
        "rescue": "RiskAssessment",
        "road": "RoadCondition",
        "building": "BuildingCondition",
        "": "EntireCondition",
    },
}

COUNTING = {"SimpleCounting", "ComplexCounting"}
DENSITY = ["low", "moderate", "high"]


def resolve_type(raw_type, question, table):
    entry = table.get(raw_type)
    if entry is None:
        return None
    if isinstance(entry, str):
        return entry
    q = question.lower()
    for needle, target in entry.items():
        if needle in q:
            return target
    return None


def normalize(answer):
    return " ".join(str(answer).strip().lower().split())


def options_for(qtype, gt):
    if qtype == "DensityEstimation":
        return DENSITY
    if gt in ("yes", "no"):
        return ["yes", "no"]
    if gt in ("flooded", "non-flooded", "non flooded"):
        return ["flooded", "non-flooded"]
    return None


def convert(annotations, image_dir, table):
    records, skipped = [], []
    for qid in sorted(annotations, key=str):
        a = annotations[qid]
        question = a["Question"].strip()
        qtype = resolve_type(a["Question_Type"], question, table)
        if qtype is None:
            skipped.append((qid, f"unmapped type {a['Question_Type']!r}"))
            continue
        image = str(a["Image_ID"])
        gt = normalize(a["Ground_Truth"])
        rec = {
            "question_id": str(qid),
            "image_id": Path(image).stem,
            "image_path": str(Path(image_dir) / image),
            "question": question,
            "question_type": qtype,
        }
        if qtype in COUNTING:
            if not gt.isdigit():
                skipped.append((qid, f"non-integer count {gt!r}"))
                continue
            rec["answer_kind"] = "integer"
            rec["ground_truth"] = str(int(gt))
        else:
            gt = "non-flooded" if gt == "non flooded" else gt
            opts = options_for(qtype, gt)
            if opts is None or gt not in opts:
                skipped.append((qid, f"answer {gt!r} fits no option set for {qtype}"))
                continue
            rec["answer_kind"] = "categorical"
            rec["options"] = opts
            rec["ground_truth"] = gt
        records.append(rec)
    return records, skipped


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("annotations", type=Path, help="FloodNet VQA JSON file")
    ap.add_argument("--image-dir", default="images", help="directory prefix written into image_path")
    ap.add_argument("--type-map", type=Path, help="JSON file replacing the default type mapping")
    ap.add_argument("-o", "--out", type=Path, help="output JSON Lines (default: stdout)")
    args = ap.parse_args()

    table = json.loads(args.type_map.read_text()) if args.type_map else TYPE_MAP
    records, skipped = convert(json.loads(args.annotations.read_text()), args.image_dir, table)

    out = args.out.open("w", encoding="utf-8") if args.out else sys.stdout
    for r in records:
        out.write(json.dumps(r, ensure_ascii=False) + "\n")
    if args.out:
        out.close()
    for qid, why in skipped:
        print(f"skipped {qid}: {why}", file=sys.stderr)
    print(f"{len(records)} records written, {len(skipped)} skipped", file=sys.stderr)


if __name__ == "__main__":
    main()
