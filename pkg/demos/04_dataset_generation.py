#!/usr/bin/env python3
"""The synthetic dataset pipeline, end to end at demo scale.

Projections -> templates -> instantiation over the gazetteer -> executed
reference answers -> paraphrases -> deterministic split and export.
"""

import json
import tempfile
from pathlib import Path

from geoqa import (
    SplitSpec,
    enumerate_projections,
    generate_dataset,
    ingest,
    load_schema,
    load_templates,
    split_and_export,
)
from geoqa.datagen import ProjectionConfig

DATA = Path(__file__).resolve().parent.parent / "data"

print("-- projections --------------------------------------------------------")
tables = load_schema(DATA / "schema.yaml")
hospitals = tables[0]
config = ProjectionConfig(deny_attributes=("Bike_Dist", "Bike_Time"))
projections = enumerate_projections(hospitals, config)
print(f"{hospitals.name}: {len(projections)} projections after the reviewed filter")
supers = [p for p in projections if p.is_superprojection]
print(f"of which {len(supers)} are superprojections, e.g. "
      f"{supers[0].attributes}")

print("\n-- instantiation and answers -------------------------------------------")
store = ingest(DATA / "access_demo.csv", DATA / "gazetteer_demo.csv")
templates = load_templates(DATA / "templates" / "en.yaml")
sample = list(store.gazetteer[:12])
pairs, drops = generate_dataset(templates, sample, store, paraphrase_count=2)
print(f"{len(pairs)} question-answer pairs from {len(templates)} templates "
      f"x {len(sample)} locations ({len(drops.dropped)} skeletons dropped)")

flagship = next(p for p in pairs if p.metadata["paraphrase_index"] == 0)
print(f"\nQ: {flagship.question}")
print(f"A: {flagship.answer}")
variant = next(
    p for p in pairs
    if p.metadata["template_id"] == flagship.metadata["template_id"]
    and p.metadata["location"] == flagship.metadata["location"]
    and p.metadata["paraphrase_index"] > 0
)
print(f"paraphrase: {variant.question}")

print("\n-- split and export -----------------------------------------------------")
with tempfile.TemporaryDirectory() as tmp:
    manifest = split_and_export(
        pairs,
        SplitSpec(seed=11, unseen_location_count=3, semantic_variant_fraction=0.3),
        tmp,
    )
    for split, count in manifest.counts.items():
        print(f"  {split:22s} {count:5d}")
    print(f"  content hash: {manifest.content_hash[:16]}...")
    record = json.loads(
        (Path(tmp) / "train.jsonl").read_text("utf-8").splitlines()[0]
    )
    print(f"  first train record id={record['id']} "
          f"template={record['metadata']['template_id']}")
