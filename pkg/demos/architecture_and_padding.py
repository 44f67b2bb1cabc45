"""
The seven networks and their padding
====================================

Two encoders map 28x28 digits (domain 1) and 16x16 digits (domain 2) into one
latent space; two generators map back; two image discriminators and one
latent discriminator judge the results.  The last encoder layers and the first
generator layers are shared between the domains.

Some paddings are not pinned down by the layer table, so the builder solves for
an assignment under which both encoders meet at one latent shape and each
generator restores its own image size.
"""

import numpy as np

from lstnet.autograd import Tensor, no_grad
from lstnet.networks import BuildConfig, ShapeError, build_lstnet

model = build_lstnet(BuildConfig(seed=0))
report = model.parameter_report()
print(f"{report['total']:,} parameters in {report['tensors']} tensors")
for name, count in report["per_network"].items():
    print(f"  {name}: {count:,}")

# Shared layers are the same Parameter objects in both encoders (or generators)
for group, names in report["shared_groups"].items():
    print(group, sorted({n.split('.')[1] for n in names}), "->", len(names), "tensors")

# Paddings that differ from the plain default (same for conv/deconv, valid for pooling)
default = {"padding": "same", "pool_padding": "valid", "output_padding": 0}
for key, value in model.config.padding.items():
    if default.get(key.rsplit(".", 1)[1]) != value:
        print("solved:", key, "=", value)

# Push random images through all four cycles
rng = np.random.default_rng(0)
x1 = Tensor(rng.uniform(-1, 1, (2, 28, 28, 1)))
x2 = Tensor(rng.uniform(-1, 1, (2, 16, 16, 1)))
with no_grad():
    z1, z2 = model.E1(x1), model.E2(x2)
    print("latent", z1.shape, z2.shape)
    print("x1 -> z -> x1", model.G1(z1).shape)
    print("x2 -> z -> x1 (translation)", model.G1(z2).shape)
    print("x1 -> x2 -> x1", model.G1(model.E2(model.G2(z1))).shape)
    print("D1 / D2 / Dl outputs", model.D1(x1).shape, model.D2(x2).shape, model.Dl(z1).shape)

# The solver handles other image sizes too ...
other = build_lstnet(BuildConfig(domain_shapes={1: (20, 20, 1), 2: (15, 15, 1)}))
print("20x20 / 15x15 latent:", other.E1(Tensor(np.zeros((1, 20, 20, 1)))).shape)

# ... and names the offending layer when no assignment exists
try:
    build_lstnet(BuildConfig(domain_shapes={1: (28, 28, 1), 2: (2, 2, 1)}))
except ShapeError as exc:
    print("ShapeError:", exc)
