#!/usr/bin/env python3
"""Regenerates the reference fixtures under tests/fixtures.

Needs torch, open_clip_torch and safetensors. The outputs are committed, so
this only has to be re-run when the fixtures themselves change.
"""
import json
import pathlib

import numpy as np
import open_clip
import torch
import torch.nn.functional as F
from open_clip.model import CLIP, CLIPTextCfg, CLIPVisionCfg
from safetensors.torch import save_file

ROOT = pathlib.Path(__file__).resolve().parents[1]
OUT = ROOT / "tests" / "fixtures"

TOKENIZER_TEXTS = [
    "swing",
    "a photo of a cat",
    "type on",
    "draw on",
    "Hello,  WORLD!! it's 2024 naïve café",
    "the red circle",
    "pick_up the mug",
    "   leading and trailing   ",
    "don't we'll I'M you've",
    "emoji 🙂 and tabs\tand\nnewlines",
    " ".join(["word"] * 500),
]


def tokenizer_reference():
    tok = open_clip.get_tokenizer("RN101")
    cases = []
    for text in TOKENIZER_TEXTS:
        ids = tok([text])[0].tolist()
        cases.append({"text": text, "ids": [i for i in ids if i != 0]})
    (OUT / "tokenizer_reference.json").write_text(json.dumps({"vocab_size": 49408, "context_length": 77, "cases": cases}, indent=1, ensure_ascii=False) + "\n")


def randomize(model, gen):
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("bn1.weight") or name.endswith("bn2.weight") or name.endswith("bn3.weight") or ".1.weight" in name and "downsample" in name:
                p.copy_(0.5 + torch.rand(p.shape, generator=gen))
            elif "ln" in name and name.endswith("weight"):
                p.copy_(0.8 + 0.4 * torch.rand(p.shape, generator=gen))
            else:
                p.copy_(torch.randn(p.shape, generator=gen) * (0.5 / max(1, p.shape[-1]) ** 0.5 if p.ndim > 1 else 0.1))
        for name, b in model.named_buffers():
            if name.endswith("running_mean"):
                b.copy_(0.1 * torch.randn(b.shape, generator=gen))
            elif name.endswith("running_var"):
                b.copy_(0.5 + torch.rand(b.shape, generator=gen))


def visual_taps(visual, x):
    x = visual.stem(x)
    x = visual.layer1(x)
    f1 = visual.layer2(x)
    f2 = visual.layer3(f1)
    f3 = visual.layer4(f2)
    return f1, f2, f3


def attnpool_interpolated(pool, x):
    n, c, h, w = x.shape
    pos = pool.positional_embedding
    s = int(round((pos.shape[0] - 1) ** 0.5))
    grid = pos[1:].reshape(1, s, s, c).permute(0, 3, 1, 2)
    grid = F.interpolate(grid, size=(h, w), mode="bilinear", align_corners=False)
    grid = grid.permute(0, 2, 3, 1).reshape(h * w, c)
    pos = torch.cat([pos[:1], grid], dim=0)
    t = x.reshape(n, c, h * w).permute(2, 0, 1)
    t = torch.cat([t.mean(dim=0, keepdim=True), t], dim=0) + pos[:, None, :]
    out, _ = F.multi_head_attention_forward(
        query=t, key=t, value=t, embed_dim_to_check=c, num_heads=pool.num_heads,
        q_proj_weight=pool.q_proj.weight, k_proj_weight=pool.k_proj.weight, v_proj_weight=pool.v_proj.weight,
        in_proj_weight=None, in_proj_bias=torch.cat([pool.q_proj.bias, pool.k_proj.bias, pool.v_proj.bias]),
        bias_k=None, bias_v=None, add_zero_attn=False, dropout_p=0.0,
        out_proj_weight=pool.c_proj.weight, out_proj_bias=pool.c_proj.bias,
        use_separate_proj_weight=True, training=False, need_weights=False)
    return out[0]


def nhwc(t):
    return t.permute(0, 2, 3, 1).contiguous()


def tiny_clip():
    gen = torch.Generator().manual_seed(1234)
    vision = CLIPVisionCfg(layers=[1, 1, 1, 1], width=8, image_size=64)
    text = CLIPTextCfg(context_length=16, vocab_size=1024, width=64, heads=1, layers=2)
    model = CLIP(embed_dim=32, vision_cfg=vision, text_cfg=text, quick_gelu=True).eval()
    randomize(model, gen)
    state = {k: v.contiguous() for k, v in model.state_dict().items() if k != "attn_mask"}
    save_file(state, str(OUT / "tiny_clip.safetensors"), metadata={"quick_gelu": "true", "vision_heads": "4", "text_heads": "1"})

    ref = {}
    with torch.no_grad():
        for size in (64, 96):
            px = torch.randn(2, 3, size, size, generator=gen)
            f1, f2, f3 = visual_taps(model.visual, px)
            fs = model.visual(px) if size == 64 else attnpool_interpolated(model.visual.attnpool, f3)
            ref[f"pixels_{size}"] = nhwc(px)
            ref[f"f1_{size}"] = nhwc(f1)
            ref[f"f2_{size}"] = nhwc(f2)
            ref[f"f3_{size}"] = nhwc(f3)
            ref[f"fs_{size}"] = fs.contiguous()
        ids = torch.zeros(3, 16, dtype=torch.int64)
        rows = [[1022, 5, 77, 1023], [1022, 900, 3, 12, 640, 1023], [1022] + list(range(100, 114)) + [1023]]
        for i, r in enumerate(rows):
            ids[i, : len(r)] = torch.tensor(r)
        ref["text_ids"] = ids
        ref["text_valid"] = torch.tensor([len(r) for r in rows], dtype=torch.int64)
        ref["f_q"] = model.encode_text(ids).contiguous()
        x = model.token_embedding(ids) + model.positional_embedding
        x = model.transformer(x, attn_mask=model.attn_mask)
        ref["f_t"] = (model.ln_final(x) @ model.text_projection).contiguous()
        ref["f_q_first"] = ref["f_t"][:, 0].contiguous()
    save_file({k: v.float().contiguous() for k, v in ref.items()}, str(OUT / "tiny_clip_reference.safetensors"))


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    tokenizer_reference()
    tiny_clip()
