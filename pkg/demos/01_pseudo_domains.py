"""Pseudo-domains from one source domain.

Builds a small synthetic color-shift dataset, draws one mini-batch and pushes
it through a transform set. Each op in the set yields one pseudo-domain batch;
the script prints how far each moves the pixels and writes a before/after
strip per op.

    python demos/01_pseudo_domains.py --out demo_out/previews
"""

import argparse
from pathlib import Path

import torch
from PIL import Image

from pmdg.data import DomainStyle, SyntheticShiftSpec, generate_synthetic, make_minibatches
from pmdg.transforms import apply_set, make_transform_set


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="demo_out/previews")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = SyntheticShiftSpec(num_classes=2, image_size=32, samples_per_domain=64, domains=[
        DomainStyle("source", rho=0.95, background="noise", background_tint=0.3)])
    source = generate_synthetic(spec)
    batch = make_minibatches(source, 8, args.seed, 0, augment=False)[0]

    names = ["org", "rand_conv", "rand_conv", "style_stats", "edge", "mixup"]
    tset = make_transform_set(names, args.seed, num_classes=2)
    pseudo = apply_set(tset, batch)

    print(f"{'op':<14}{'tag':<26}{'mean |dx|':>10}  labels")
    for op, b in zip(tset.ops, pseudo):
        shift = (b.images - batch.images).abs().mean().item()
        kind = "soft" if b.soft else "hard"
        print(f"{op.name:<14}{b.domain_tag:<26}{shift:>10.3f}  {kind}")
    # the two rand_conv slots draw different kernels: distinct pseudo-domains
    same = torch.equal(pseudo[1].images, pseudo[2].images)
    print(f"\nrand_conv slots identical: {same}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    norm = tset.ops[0].normalizer
    for k, b in enumerate(pseudo):
        rows = [norm.denormalize(x.images).clamp(0, 1) for x in (batch, b)]
        strip = torch.cat([torch.cat(list(r), dim=2) for r in rows], dim=1)
        arr = (strip.permute(1, 2, 0).numpy() * 255).round().astype("uint8")
        Image.fromarray(arr).resize((arr.shape[1] * 2, arr.shape[0] * 2), Image.NEAREST) \
            .save(out / f"{k}_{names[k]}.png")
    print(f"wrote {len(pseudo)} strips to {out}")


if __name__ == "__main__":
    main()
