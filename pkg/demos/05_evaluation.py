#!/usr/bin/env python3
"""Scoring generated answers: ROUGE-L, BLEU-4, exact match, error classes.

A perfect prediction set scores 100% across the board; a controlled
corruption shows how misses land in the syntax/location/other taxonomy.
"""

from pathlib import Path

from geoqa import evaluate_corpus, ingest
from geoqa.datagen import generate_dataset, load_templates
from geoqa.evaluation import EvalExample
from geoqa.metrics import bleu_4, rouge_l, score_pair

DATA = Path(__file__).resolve().parent.parent / "data"

print("-- the metrics on toy sequences ------------------------------------------")
reference = ["what", "is", "the", "nearest", "hospital"]
generated = ["the", "nearest", "hospital"]
print(f"ROUGE-L {rouge_l(reference, generated):.2f} "
      f"(LCS overlap, order-aware, contiguity-free)")
print(f"BLEU-4  {bleu_4(['a', 'b', 'c', 'd', 'e'], ['a', 'b', 'c', 'x', 'e']):.2f} "
      "(one bad token kills every 4-gram; no smoothing)")

print("\n-- corpus evaluation -------------------------------------------------------")
store = ingest(DATA / "access_demo.csv", DATA / "gazetteer_demo.csv")
templates = [t for t in load_templates(DATA / "templates" / "en.yaml")
             if t.id == "t02_nearest_mode"]
pairs, _ = generate_dataset(templates, list(store.gazetteer[:10]), store)
examples = [
    EvalExample(id=p.id, question=p.question, reference=p.answer, subset="demo")
    for p in pairs
]

predictions = {p.id: p.answer for p in pairs}
ids = sorted(predictions)
predictions[ids[0]] = predictions[ids[0]].replace("Abadiño", "Abadino")  # misspell
predictions[ids[1]] = predictions[ids[1]].replace(', metric_to_extract="distance")', ")")
predictions[ids[2]] = "I do not know."

report = evaluate_corpus(examples, predictions=predictions,
                         resolve=store.resolve_location)
print(report.render_text())

print("\n-- per-example scores -------------------------------------------------------")
scores = score_pair(pairs[0].answer, predictions[pairs[0].id])
print(f"first corrupted example: exact={scores.exact_match} "
      f"bleu={scores.bleu_4:.3f} rouge={scores.rouge_l:.3f} "
      f"p_n={tuple(round(p, 3) for p in scores.precisions)}")
