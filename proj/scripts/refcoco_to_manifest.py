#!/usr/bin/env python3
"""Writes a referring-segmentation manifest (JSON Lines) from a refer-style
dataset: refs(<split_by>).p plus instances.json, with one binary mask PNG per
referring expression.

    python3 scripts/refcoco_to_manifest.py --refer-dir data/refcoco \
        --images data/coco/train2014 --out data/refcoco_manifest --split train

Each line: {"image": ..., "text": ..., "mask": ..., "split": ...}
"""
import argparse
import json
import pathlib
import pickle

import numpy as np
from PIL import Image, ImageDraw


def rasterize(segmentation, height, width):
    if isinstance(segmentation, dict):
        from pycocotools import mask as mask_utils

        rle = segmentation
        if isinstance(rle.get("counts"), list):
            rle = mask_utils.frPyObjects(rle, height, width)
        return mask_utils.decode(rle).astype(np.uint8)
    canvas = Image.new("L", (width, height), 0)
    draw = ImageDraw.Draw(canvas)
    for poly in segmentation:
        if len(poly) >= 6:
            draw.polygon([(poly[i], poly[i + 1]) for i in range(0, len(poly), 2)], fill=1)
    return np.asarray(canvas, dtype=np.uint8)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--refer-dir", required=True, help="holds refs(<split_by>).p and instances.json")
    ap.add_argument("--split-by", default="unc")
    ap.add_argument("--images", required=True, help="COCO image directory")
    ap.add_argument("--out", required=True)
    ap.add_argument("--split", default="train", help="train, val, testA, testB, or 'all'")
    args = ap.parse_args()

    refer = pathlib.Path(args.refer_dir)
    with open(refer / f"refs({args.split_by}).p", "rb") as f:
        refs = pickle.load(f)
    instances = json.loads((refer / "instances.json").read_text())
    images = {im["id"]: im for im in instances["images"]}
    anns = {a["id"]: a for a in instances["annotations"]}

    out = pathlib.Path(args.out)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    image_dir = pathlib.Path(args.images).resolve()
    count = 0
    with open(out / f"{args.split}.jsonl", "w") as manifest:
        for ref in refs:
            if args.split != "all" and ref["split"] != args.split:
                continue
            im = images[ref["image_id"]]
            ann = anns[ref["ann_id"]]
            mask_name = f"masks/{ref['ref_id']}.png"
            mask_path = out / mask_name
            if not mask_path.exists():
                m = rasterize(ann["segmentation"], im["height"], im["width"])
                Image.fromarray(m * 255).save(mask_path)
            for sent in ref["sentences"]:
                text = sent["sent"].strip()
                if not text:
                    continue
                manifest.write(json.dumps({"image": str(image_dir / im["file_name"]), "text": text,
                                           "mask": mask_name, "split": ref["split"]}) + "\n")
                count += 1
    print(f"{count} expressions -> {out / (args.split + '.jsonl')}")


if __name__ == "__main__":
    main()
