#!/usr/bin/env python3
"""Convert PyTorch weights into tsgckpt/1 containers.

  convert_checkpoint.py adm 256x256_diffusion_uncond.pt adm256.tsgckpt
  convert_checkpoint.py resnet resnet50 resnet50_imagenet.tsgckpt [--weights file.pth]

The ADM preset matches the released unconditional 256x256 model; other
geometries can be described with --config (a JSON object of U-Net fields).
"""
import argparse
import hashlib
import json
import sys

import numpy as np
import torch

SCHEMA = "tsgckpt/1"

ADM_256_UNCOND = {
    "image_size": 256,
    "in_channels": 3,
    "model_channels": 256,
    "out_channels": 6,
    "num_res_blocks": 2,
    "attention_resolutions": [8, 16, 32],
    "channel_mult": [1, 1, 2, 2, 4, 4],
    "conv_resample": True,
    "num_heads": 4,
    "num_head_channels": 64,
    "use_scale_shift_norm": True,
    "resblock_updown": True,
    "norm_groups": 32,
    "middle_attention": True,
    "time_embed_channels": 0,
}


def write_container(path, meta, tensors):
    index, offset, blobs = [], 0, []
    for name, t in tensors:
        a = np.ascontiguousarray(t.detach().cpu().numpy().astype("<f4"))
        index.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
        blobs.append(a.tobytes())
    header = {"schema": SCHEMA, "meta": meta, "tensors": index, "payload_floats": offset}
    with open(path, "wb") as f:
        f.write(json.dumps(header, separators=(",", ":")).encode() + b"\n")
        for b in blobs:
            f.write(b)


def load_state(path):
    obj = torch.load(path, map_location="cpu")
    if isinstance(obj, dict) and "state_dict" in obj:
        obj = obj["state_dict"]
    if not isinstance(obj, dict):
        sys.exit(f"{path}: expected a state dict")
    return {k.removeprefix("module."): v for k, v in obj.items() if torch.is_tensor(v)}


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def convert_adm(args):
    state = load_state(args.src)
    if any(k.startswith("label_emb") for k in state):
        sys.exit("class-conditional checkpoints are not supported")
    unet = dict(ADM_256_UNCOND)
    if args.config:
        with open(args.config) as f:
            unet.update(json.load(f))
    out_w = state.get("out.2.weight")
    if out_w is not None and out_w.shape[0] != unet["out_channels"]:
        sys.exit(f"out.2.weight has {out_w.shape[0]} channels, config says {unet['out_channels']}")
    tag = args.tag or "adm-" + file_digest(args.src)[:12]
    predictor = {
        "resolution": [unet["image_size"], unet["image_size"]],
        "channels": unet["in_channels"],
        "T": args.T,
        "conditional": False,
        "source": "pretrained_checkpoint",
        "tag": tag,
        "schedule": {"kind": "linear", "beta_start": args.beta_start, "beta_end": args.beta_end},
    }
    tensors = sorted(state.items())
    write_container(args.dst, {"predictor": predictor, "unet": unet}, tensors)
    print(json.dumps({"out": args.dst, "tensors": len(tensors), "tag": tag}))


def convert_resnet(args):
    import torchvision

    if args.weights:
        state = load_state(args.weights)
    else:
        model = getattr(torchvision.models, args.arch)(weights="DEFAULT")
        state = model.state_dict()
    tensors = [(k, v.float()) for k, v in sorted(state.items()) if not k.endswith("num_batches_tracked")]
    write_container(args.dst, {"kind": "backbone", "arch": args.arch}, tensors)
    print(json.dumps({"out": args.dst, "tensors": len(tensors)}))


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="kind", required=True)
    a = sub.add_parser("adm", help="guided-diffusion U-Net state dict")
    a.add_argument("src")
    a.add_argument("dst")
    a.add_argument("--config", help="JSON file overriding U-Net fields")
    a.add_argument("--T", type=int, default=1000)
    a.add_argument("--beta-start", type=float, default=1e-4)
    a.add_argument("--beta-end", type=float, default=0.02)
    a.add_argument("--tag")
    a.set_defaults(fn=convert_adm)
    r = sub.add_parser("resnet", help="torchvision ResNet weights for --pretrained-backbone")
    r.add_argument("arch", choices=["resnet18", "resnet50"])
    r.add_argument("dst")
    r.add_argument("--weights", help="local state dict instead of downloading")
    r.set_defaults(fn=convert_resnet)
    args = p.parse_args()
    args.fn(args)


if __name__ == "__main__":
    main()
