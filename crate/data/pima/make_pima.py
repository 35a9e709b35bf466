"""Stage the Pima Indians Diabetes data (KEEL `pima.dat`) as a two-stage funnel.

stage0: Preg, Pedi, Age (always recorded)
stage1: Pres, Mass      (cheap tests)
stage2: Skin, Insu, Plas (expensive tests)

A zero in a test column means the test is missing. A row reaches stage 1
when both cheap tests are present and stage 2 when all expensive tests are
too. The diagnosis is the outcome at every stage the row reached.
"""
import csv
import json
import sys
from pathlib import Path

STAGES = [["Preg", "Pedi", "Age"], ["Pres", "Mass"], ["Skin", "Insu", "Plas"]]

here = Path(__file__).resolve().parent
src = Path(sys.argv[1]) if len(sys.argv) > 1 else here / "pima.dat"

names, rows = [], []
for line in src.read_text().splitlines():
    line = line.strip()
    if not line or line.startswith("%"):
        continue
    if line.lower().startswith("@attribute"):
        names.append(line.split()[1])
    elif not line.startswith("@"):
        rows.append(dict(zip(names, line.split(","))))

columns = [c for stage in STAGES for c in stage]
header = columns + ["__depth", "__outcome", "__outcome_1", "__outcome_2", "__row_id"]
counts = [0, 0, 0]
positives = [0, 0, 0]
with open(here / "pima.csv", "w", newline="") as f:
    w = csv.writer(f)
    w.writerow(header)
    for i, r in enumerate(rows):
        def present(stage):
            return all(float(r[c]) != 0.0 for c in STAGES[stage])
        depth = 0
        if present(1):
            depth = 2 if present(2) else 1
        outcome = "pass" if r["Class"] == "positive" else "reject"
        cells = [r[c] if s <= depth else "" for s, stage in enumerate(STAGES) for c in stage]
        per_stage = [outcome if depth >= s else "" for s in (1, 2)]
        w.writerow(cells + [depth, outcome if depth else ""] + per_stage + [i])
        for s in range(depth + 1):
            counts[s] += 1
            positives[s] += outcome == "pass"

schema = {
    "stages": [{"name": f"stage{s}", "num_features": len(cols)} for s, cols in enumerate(STAGES)],
    "columns": [{"name": c, "kind": "continuous", "stage": s} for s, cols in enumerate(STAGES) for c in cols],
}
(here / "pima.schema.json").write_text(json.dumps(schema, indent=2) + "\n")
for s in (1, 2):
    print(f"stage {s}: {counts[s]} rows, {100 * positives[s] / counts[s]:.1f}% positive")
