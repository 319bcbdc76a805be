"""
Inside the tracker network
==========================

The network correlates a template with a search crop (target-aware branch),
encodes motion in the search crop alone (motion-aware branch), and gates the
motion tokens by their similarity to a decoded target embedding before a
soft-argmax head reads out the box.
"""

import numpy as np

from evtrack.model import DESK, DANet, ablation, soft_argmax_box
from evtrack.tensor import Tensor

net = DANet(DESK, seed=0)
print(DESK.grid, DESK.d_model, net.n_parameters())

rng = np.random.default_rng(0)
template = rng.normal(size=(1, 1, 48, 48))
search = rng.normal(size=(1, 1, 96, 96))

f_z, f_x = net.extract_features(template), net.extract_features(search)
R = net.tan_correlate(f_z, f_x)          # d x G x G response
R_enc = net.tan_encode(R)                 # G*G tokens
T = net.tan_decode(R_enc)                 # one target token
M_enc = net.man_encode(f_x)               # motion tokens
fused, gate = net.fuse(T, M_enc, R_enc, return_gate=True)
print(f_z.shape, f_x.shape, R.shape, R_enc.shape, T.shape, M_enc.shape, fused.shape)
print("gate range", gate.data.min(), gate.data.max())

box = net.regress(fused)
print(box.data)

# %%
# The head is an expectation over the grid, so a single peaked logit reads
# out that cell's coordinates and flat logits give the grid mean.

center = np.zeros((1, 1, 4, 4))
print(soft_argmax_box(Tensor(center), Tensor(np.zeros((1, 2, 4, 4)))).data)
center[0, 0, 2, 1] = 50.0
print(soft_argmax_box(Tensor(center), Tensor(np.zeros((1, 2, 4, 4)))).data)

# %%
# Ablations switch branches off while keeping every interface intact.

for name in ("full", "tan_only", "man_only", "no_shortcut", "add_fusion"):
    variant = DANet(ablation(DESK, name))
    print(name, variant.n_parameters(), variant.forward(template, search).data.round(3))
