"""
Convolution layers and their gradients
======================================

Build single layers by hand, run them forward and backward, and compare
the analytic gradients against central finite differences.
"""

import numpy as np

from docsr import nncore, srnet
from docsr.nncore import Activation, ConvSpec

rng = np.random.default_rng(0)

# a 5x5 convolution with 64 filters over a one-channel 9x9 input
spec = ConvSpec(in_channels=1, out_channels=64, kernel=5, activation=Activation.RELU)
params = nncore.he_init(spec, rng_seed=1)
x = rng.normal(size=(9, 9, 1))
out = nncore.conv_forward(x, params, spec)
print("conv output", out.shape)  # valid convolution: 9 - 5 + 1 = 5

# He init draws weights with variance 2 / fan_in
print("fan_in", spec.fan_in, "weight var", params.weights.var(), "expected", 2 / spec.fan_in)

# PReLU keeps a slope per channel for negative inputs
z = np.array([[[-2.0, 1.0, -0.5]]])
print("prelu", nncore.prelu_forward(z, np.array([0.25, 0.25, 0.5])))

# the full network: 16x16 low-res patch in, 10x10 high-res patch out
model = srnet.build_model(Activation.PRELU, rng_seed=0)
print("parameters", model.num_parameters)
h = np.zeros((16, 16, 1), np.float32)
for layer_spec, layer_params in model.layers:
    h, _ = nncore.layer_forward(h, layer_spec, layer_params)
    print(f"  {layer_spec.kernel}x{layer_spec.kernel} conv -> {h.shape}")

# gradient check on the composed net in 64-bit
layers = [(s, p.astype(np.float64)) for s, p in model.layers]
for _, p in layers:
    p.biases[:] = rng.normal(0, 0.05, p.biases.shape)
patch = rng.normal(0, 0.3, (16, 16, 1))
target = rng.normal(0, 0.3, (10, 10, 1))
for report in nncore.grad_check(layers, patch, target):
    print(f"  {report.parameter_name:16s} {report.max_relative_error:.2e}",
          "ok" if report.passed else "FAIL")
