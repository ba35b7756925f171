#!/usr/bin/env python3
"""Writes an affordance evaluation manifest (JSON Lines) for an AGD20K-style
test split laid out as

    <root>/<Seen|Unseen>/testset/egocentric/<action>/<object>/<name>.jpg
    <root>/<Seen|Unseen>/testset/GT/<action>/<object>/<name>.png

    python3 scripts/agd20k_to_manifest.py --root data/AGD20K --setting Seen --out data/agd20k_seen.jsonl

Actions are turned into prompts by replacing underscores with spaces
("sit_on" -> "sit on"). Images without a ground-truth map are skipped.
"""
import argparse
import json
import pathlib


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--root", required=True)
    ap.add_argument("--setting", default="Seen", choices=["Seen", "Unseen"])
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    test = pathlib.Path(args.root).resolve() / args.setting / "testset"
    ego, gt = test / "egocentric", test / "GT"
    rows, skipped = [], 0
    for image in sorted(ego.glob("*/*/*")):
        if image.suffix.lower() not in {".jpg", ".jpeg", ".png"}:
            continue
        action, obj = image.parent.parent.name, image.parent.name
        heatmap = gt / action / obj / (image.stem + ".png")
        if not heatmap.exists():
            skipped += 1
            continue
        rows.append({"id": f"{action}/{obj}/{image.stem}", "image": str(image), "action": action.replace("_", " "),
                     "heatmap": str(heatmap), "object": obj})

    out = pathlib.Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(json.dumps(r) + "\n" for r in rows))
    print(f"{len(rows)} samples -> {out} ({skipped} without ground truth)")


if __name__ == "__main__":
    main()
