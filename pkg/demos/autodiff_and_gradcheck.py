"""
Reverse-mode autodiff and finite-difference checks
==================================================

Every layer in lstnet is built from a handful of numpy primitives that each
record how to push a gradient back to their inputs.  This walk-through builds
a small expression by hand, reads off its gradients, and compares them with
central finite differences.
"""

import numpy as np

from lstnet import autograd as ag
from lstnet import functional as F
from lstnet.autograd import Tensor, default_dtype
from lstnet.gradcheck import check_gradients, numerical_gradient, run_suite

rng = np.random.default_rng(0)

# A scalar loss: mean(sigmoid(conv(x, w))).  Tensors are NHWC and the kernel
# layout is (K, K, C_in, C_out).
with default_dtype(np.float64):
    x = Tensor(rng.standard_normal((2, 5, 5, 1)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 3, 1, 4)) * 0.3, requires_grad=True)
    loss = ag.mean(ag.sigmoid(F.conv2d(x, w, stride=1, padding="same")))
    loss.backward()
    print("loss", float(loss.data))
    print("d loss / d w, first channel:\n", np.round(w.grad[..., 0, 0], 5))

    # The same number by perturbing each kernel entry by +-h
    def f():
        return float(ag.mean(ag.sigmoid(F.conv2d(Tensor(x.data), Tensor(w.data), 1, "same"))).data)
    numeric = numerical_gradient(f, w.data)
    print("max |analytic - numeric|:", np.abs(numeric - w.grad).max())

    # check_gradients wraps the same idea and returns a relative error
    print(check_gradients("conv + sigmoid", lambda a, b: ag.sigmoid(F.conv2d(a, b, 1, "same")), [x, w], 1e-5).line())

# The packaged suite covers every primitive, the phase losses and the full
# objective on a tiny model; it is also available as ``lstnet gradcheck``.
results = run_suite("ops")
print(f"{sum(r.passed for r in results)}/{len(results)} primitive checks passed")
