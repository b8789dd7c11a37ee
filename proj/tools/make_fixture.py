#!/usr/bin/env python3
"""Generate the hermetic 40-item fixture under data/fixture/.

Writes tiny PNG images, a pool and an eval dataset, image embeddings and a
scripted-backend fixture covering every (question, strategy, stage) tag.
Exemplar sets are computed here by brute force, independently of the C++
selection code, and written into the fixture's must_contain assertions.

The correctness plan (CORRECT below) is the hand-authored expected accuracy
table that the acceptance suite checks.
"""

import argparse
import hashlib
import json
import math
import random
from pathlib import Path

from PIL import Image

DIM = 16
SEED = 20240611

QUESTIONS = {
    "BuildingCondition": ("What is the condition of the buildings in this image?", ["flooded", "non-flooded"]),
    "RoadCondition:yn": ("Is the road easily accessible?", ["yes", "no"]),
    "RoadCondition:fl": ("What is the condition of the road?", ["flooded", "non-flooded"]),
    "EntireCondition": ("What is the overall condition of the given image?", ["flooded", "non-flooded"]),
    "DensityEstimation": ("What is the density of residential houses in this image?", ["low", "moderate", "high"]),
    "RiskAssessment": ("Does this area need immediate rescue assistance?", ["yes", "no"]),
    "SimpleCounting": ("How many buildings are in the image?", None),
    "ComplexCounting:f": ("How many flooded buildings are in the image?", None),
    "ComplexCounting:n": ("How many non-flooded buildings are in the image?", None),
}

# Eval items, two per image: (variant, ground truth).
EVAL = [
    ("BuildingCondition", "flooded"), ("SimpleCounting", "4"),
    ("RoadCondition:yn", "yes"), ("DensityEstimation", "low"),
    ("EntireCondition", "flooded"), ("ComplexCounting:f", "2"),
    ("RiskAssessment", "yes"), ("BuildingCondition", "non-flooded"),
    ("DensityEstimation", "moderate"), ("SimpleCounting", "7"),
    ("ComplexCounting:n", "0"), ("EntireCondition", "non-flooded"),
    ("RiskAssessment", "no"), ("RoadCondition:fl", "flooded"),
    ("BuildingCondition", "flooded"), ("DensityEstimation", "high"),
    ("EntireCondition", "flooded"), ("SimpleCounting", "12"),
    ("RoadCondition:yn", "no"), ("ComplexCounting:f", "5"),
    ("BuildingCondition", "non-flooded"), ("RiskAssessment", "yes"),
    ("DensityEstimation", "low"), ("EntireCondition", "non-flooded"),
    ("SimpleCounting", "3"), ("RoadCondition:fl", "non-flooded"),
    ("ComplexCounting:n", "1"), ("RiskAssessment", "no"),
    ("BuildingCondition", "flooded"), ("DensityEstimation", "moderate"),
    ("EntireCondition", "flooded"), ("ComplexCounting:f", "3"),
    ("RiskAssessment", "yes"), ("RoadCondition:yn", "yes"),
    ("BuildingCondition", "non-flooded"), ("SimpleCounting", "9"),
    ("EntireCondition", "non-flooded"), ("DensityEstimation", "high"),
    ("RiskAssessment", "no"), ("ComplexCounting:n", "4"),
]

# Pool items, two per image. DensityEstimation deliberately has no "high".
POOL = [
    ("BuildingCondition", "flooded"), ("SimpleCounting", "5"),
    ("BuildingCondition", "non-flooded"), ("ComplexCounting:f", "1"),
    ("BuildingCondition", "flooded"), ("DensityEstimation", "low"),
    ("RoadCondition:yn", "yes"), ("EntireCondition", "flooded"),
    ("RoadCondition:yn", "no"), ("RiskAssessment", "yes"),
    ("RoadCondition:fl", "flooded"), ("RiskAssessment", "no"),
    ("RoadCondition:fl", "non-flooded"), ("SimpleCounting", "8"),
    ("EntireCondition", "non-flooded"), ("ComplexCounting:n", "3"),
    ("EntireCondition", "flooded"), ("DensityEstimation", "moderate"),
    ("DensityEstimation", "low"), ("RiskAssessment", "yes"),
    ("RiskAssessment", "no"), ("SimpleCounting", "2"),
    ("ComplexCounting:f", "0"), ("BuildingCondition", "non-flooded"),
    ("DensityEstimation", "moderate"), ("EntireCondition", "non-flooded"),
    ("SimpleCounting", "11"), ("ComplexCounting:n", "6"),
    ("RoadCondition:yn", "yes"), ("BuildingCondition", "flooded"),
    ("RiskAssessment", "yes"), ("RoadCondition:fl", "non-flooded"),
    ("EntireCondition", "flooded"), ("SimpleCounting", "4"),
    ("ComplexCounting:f", "2"), ("DensityEstimation", "low"),
    ("RoadCondition:yn", "no"), ("RiskAssessment", "no"),
    ("BuildingCondition", "non-flooded"), ("EntireCondition", "non-flooded"),
    ("SimpleCounting", "6"), ("ComplexCounting:n", "4"),
    ("DensityEstimation", "moderate"), ("RoadCondition:fl", "flooded"),
    ("RiskAssessment", "yes"), ("BuildingCondition", "flooded"),
    ("EntireCondition", "flooded"), ("SimpleCounting", "3"),
]
# One pool record on the first eval image: must never be its own exemplar.
POOL_ON_EVAL_IMAGE = ("BuildingCondition", "non-flooded")

STRATEGIES = ["iic", "aic", "bic", "zero-shot"]

# Hand-authored plan: correct answers per type and strategy.
TYPES = ["BuildingCondition", "ComplexCounting", "DensityEstimation", "EntireCondition",
         "RiskAssessment", "RoadCondition", "SimpleCounting"]
CORRECT = {
    #                     iic aic bic zero-shot
    "BuildingCondition": (6, 5, 5, 5),
    "ComplexCounting":   (3, 2, 3, 1),
    "DensityEstimation": (3, 3, 4, 2),
    "EntireCondition":   (6, 5, 6, 5),
    "RiskAssessment":    (5, 5, 5, 4),
    "RoadCondition":     (5, 4, 5, 4),
    "SimpleCounting":    (3, 2, 3, 2),
}

WORDS = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
         "eleven", "twelve"]

TEMPLATE_EXEMPLAR = "Example {i}:\nQuestion: {q}\nAnswer: {a}"
OPTIONS_LINE = "Possible answers: {o}"
COUNT_OPTIONS = "a non-negative integer count"
TAG_SNIPPET = "enclosed within <start> and <end> tags"
REPAIR_SNIPPET = "did not contain a final answer"


def base_type(variant):
    return variant.split(":")[0]


def make_record(qid, image_id, variant, gt):
    question, options = QUESTIONS[variant]
    rec = {
        "question_id": qid,
        "image_id": image_id,
        "image_path": f"images/{image_id}.png",
        "question": question,
        "question_type": base_type(variant),
        "answer_kind": "categorical" if options else "integer",
    }
    if options:
        assert gt in options
        rec["options"] = options
    rec["ground_truth"] = gt
    return rec


def f32(x):
    import struct
    return struct.unpack("<f", struct.pack("<f", float(x)))[0]


def cosine(a, b):
    dot = 0.0
    na = 0.0
    nb = 0.0
    for x, y in zip(a, b):
        dot += x * y
    for x in a:
        na += x * x
    for y in b:
        nb += y * y
    s = dot / (math.sqrt(na) * math.sqrt(nb))
    return max(-1.0, min(1.0, s))


def select(target, pool, vectors):
    cands = [r for r in pool
             if r["question_type"] == target["question_type"] and r["image_id"] != target["image_id"]]
    scored = [(cosine(vectors[target["image_id"]], vectors[r["image_id"]]), r) for r in cands]
    key = lambda sr: (-sr[0], sr[1]["image_id"], sr[1]["question_id"])
    scored.sort(key=key)
    if target["answer_kind"] == "integer":
        return [r for _, r in scored[:2]]
    chosen = []
    for opt in target["options"]:
        for s, r in scored:
            if r["ground_truth"] == opt:
                chosen.append((s, r))
                break
    chosen.sort(key=key)
    return [r for _, r in chosen]


def options_text(rec):
    return OPTIONS_LINE.format(o=", ".join(rec["options"]) if rec.get("options") else COUNT_OPTIONS)


def exemplar_blocks(exemplars):
    return [TEMPLATE_EXEMPLAR.format(i=i + 1, q=e["question"], a=e["ground_truth"])
            for i, e in enumerate(exemplars)]


def instruction_for(stage1_parts):
    # Identical stage-1 prompts are served from the response cache, so the
    # scripted instruction must depend only on the prompt content.
    tag = hashlib.sha256("\x00".join(stage1_parts).encode()).hexdigest()[:8]
    return ("Step 1: Identify what the question asks about.\n"
            "Step 2: Inspect the image for water reaching roads, driveways or houses.\n"
            f"Step 3: Enclose the final answer within <start> and <end> tags. [{tag}]")


def correct_answer_text(rec, idx):
    gt = rec["ground_truth"]
    # Vary the surface form; all of these normalize to the ground truth.
    if rec["answer_kind"] == "integer":
        n = int(gt)
        return WORDS[n] if idx % 3 == 1 and n < len(WORDS) else gt
    return ["{}", "  {}. ", "{}", "{}!"][idx % 4].format(gt if idx % 2 == 0 else gt.capitalize())


def wrong_answer_text(rec, idx):
    if rec["answer_kind"] == "integer":
        return "several" if idx % 2 == 0 else str(int(rec["ground_truth"]) + 1)
    others = [o for o in rec["options"] if o != rec["ground_truth"]]
    return others[idx % len(others)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data" / "fixture")
    args = ap.parse_args()
    out = args.out
    (out / "images").mkdir(parents=True, exist_ok=True)

    eval_images = [f"img_e{i:02d}" for i in range(1, len(EVAL) // 2 + 1)]
    pool_images = [f"img_p{i:02d}" for i in range(1, len(POOL) // 2 + 1)]

    eval_set = [make_record(f"e{i + 1:03d}", eval_images[i // 2], v, gt) for i, (v, gt) in enumerate(EVAL)]
    pool = [make_record(f"p{i + 1:03d}", pool_images[i // 2], v, gt) for i, (v, gt) in enumerate(POOL)]
    pool.append(make_record(f"p{len(POOL) + 1:03d}", eval_images[0], *POOL_ON_EVAL_IMAGE))

    rng = random.Random(SEED)
    vectors = {}
    for n, image_id in enumerate(eval_images + pool_images):
        vectors[image_id] = [f32(round(rng.gauss(0.0, 1.0), 4)) for _ in range(DIM)]
        Image.new("RGB", (8, 8), ((n * 53) % 256, (n * 97) % 256, (n * 31) % 256)).save(
            out / "images" / f"{image_id}.png")

    def dump_jsonl(path, rows):
        with open(path, "w", encoding="utf-8") as f:
            for r in rows:
                f.write(json.dumps(r) + "\n")

    dump_jsonl(out / "eval.jsonl", eval_set)
    dump_jsonl(out / "eval12.jsonl", eval_set[:12])
    dump_jsonl(out / "pool.jsonl", pool)
    with open(out / "embeddings.jsonl", "w", encoding="utf-8") as f:
        for image_id, v in vectors.items():
            f.write(json.dumps({"image_id": image_id, "vector": [float(f"{x:.4f}") for x in v]}) + "\n")

    by_type = {t: [r for r in eval_set if r["question_type"] == t] for t in TYPES}
    rules = []
    for s_idx, strategy in enumerate(STRATEGIES):
        wrong = set()
        for t in TYPES:
            items = by_type[t]
            n_wrong = len(items) - CORRECT[t][s_idx]
            wrong.update(r["question_id"] for r in items[len(items) - n_wrong:] if n_wrong)
        # One correct item per strategy only answers after the repair resend.
        start = s_idx * 5
        repair_qid = next(eval_set[(start + k) % len(eval_set)]["question_id"] for k in range(len(eval_set))
                          if eval_set[(start + k) % len(eval_set)]["question_id"] not in wrong)

        for idx, rec in enumerate(eval_set):
            qid = rec["question_id"]
            ex = select(rec, pool, vectors)
            blocks = exemplar_blocks(ex)
            instruction = None
            if strategy != "zero-shot":
                must = [rec["question"], options_text(rec)]
                if strategy in ("iic", "bic"):
                    must += blocks
                instruction = instruction_for(must)
                rules.append({"question_id": qid, "strategy": strategy, "stage": 1,
                              "must_contain": must, "response": instruction})

            answer = wrong_answer_text(rec, idx) if qid in wrong else correct_answer_text(rec, idx)
            must = [rec["question"], options_text(rec), TAG_SNIPPET]
            if instruction:
                must.append(instruction)
            if strategy in ("aic", "bic"):
                must += blocks
            if qid == repair_qid:
                rules.append({"question_id": qid, "strategy": strategy, "stage": 2, "must_contain": must,
                              "response": f"The scene suggests the answer is {answer}."})
                rules.append({"question_id": qid, "strategy": strategy, "stage": 2, "attempt": 1,
                              "must_contain": [REPAIR_SNIPPET], "response": f"<start>{answer}<end>"})
            else:
                rules.append({"question_id": qid, "strategy": strategy, "stage": 2, "must_contain": must,
                              "response": f"Rationale for {qid}: evidence reviewed. <start>{answer}<end> Done."})

    dump_jsonl(out / "fixture.jsonl", rules)

    print(f"wrote {len(eval_set)} eval, {len(pool)} pool, {len(vectors)} embeddings, {len(rules)} rules to {out}")


if __name__ == "__main__":
    main()
