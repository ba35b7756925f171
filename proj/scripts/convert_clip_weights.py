#!/usr/bin/env python3
"""Converts pretrained CLIP ResNet weights into the tensor file read by the
clip-resnet backbone, plus a manifest holding its SHA-256.

    python3 scripts/convert_clip_weights.py --out weights/rn101.safetensors
    python3 scripts/convert_clip_weights.py --checkpoint RN101.pt --out weights/rn101.safetensors

Without --checkpoint the weights come from open_clip ("RN101", pretrained="openai").
"""
import argparse
import hashlib
import json
import pathlib

import torch
from safetensors.torch import save_file


def load_state(checkpoint, arch):
    if checkpoint:
        try:
            model = torch.jit.load(checkpoint, map_location="cpu")
            state = model.state_dict()
        except RuntimeError:
            state = torch.load(checkpoint, map_location="cpu")
            state = state.get("state_dict", state)
        return {k.removeprefix("module."): v for k, v in state.items()}
    import open_clip

    model = open_clip.create_model(arch, pretrained="openai")
    return model.state_dict()


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--checkpoint", help="OpenAI .pt archive (TorchScript or state dict)")
    ap.add_argument("--arch", default="RN101")
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    state = load_state(args.checkpoint, args.arch)
    drop = {"attn_mask", "input_resolution", "context_length", "vocab_size", "logit_scale"}
    tensors = {k: v.detach().float().contiguous() for k, v in state.items() if k not in drop}
    missing = [k for k in ("visual.conv1.weight", "visual.attnpool.c_proj.weight", "token_embedding.weight",
                           "text_projection") if k not in tensors]
    if missing:
        raise SystemExit(f"not a CLIP ResNet state dict, missing {missing}")

    width = tensors["visual.conv1.weight"].shape[0] * 2
    text_width = tensors["ln_final.weight"].shape[0]
    metadata = {"quick_gelu": "true", "vision_heads": str(width * 32 // 64), "text_heads": str(text_width // 64),
                "arch": args.arch}

    out = pathlib.Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_file(tensors, str(out), metadata=metadata)
    manifest = out.with_suffix(".manifest.json")
    manifest.write_text(json.dumps({"file": out.name, "sha256": sha256(out), "arch": args.arch}, indent=2) + "\n")
    print(f"{out} ({len(tensors)} tensors)\n{manifest}")


if __name__ == "__main__":
    main()
