"""Measure activation magnitudes through depth at init, for several init gains."""
import sys

import numpy as np

sys.path.insert(0, "/root/pkg/src")
from pbcdiff.box import knn_graph, wrap_within
from pbcdiff.diffusion import UNIT_BOX
from pbcdiff.io import load_conformation
from pbcdiff.network import (
    ACTIVATIONS, DenoiserConfig, _conv_layer_forward,
    _mlp_forward, n_parameters,
)

conf = load_conformation("/root/pkg/.pilot/c7_reference.npz")
x0 = wrap_within(conf.coordinates / conf.box.lengths, UNIT_BOX)
cfg = DenoiserConfig()


def init_with_gain(seed, gain):
    rng = np.random.default_rng(seed)
    from pbcdiff.network import _mlp_dims
    flat = np.zeros(n_parameters(cfg), dtype=np.float64)
    offset = 0
    for dims in _mlp_dims(cfg):
        for a, b in zip(dims[:-1], dims[1:]):
            s = gain * np.sqrt(1.0 / a)
            flat[offset:offset + a * b] = rng.uniform(-s, s, size=a * b)
            offset += a * b + b
    from pbcdiff.network import DenoiserParams
    return DenoiserParams(cfg, flat.astype(np.float32))


graph = knn_graph(x0, cfg.k_neighbors, UNIT_BOX)
disp = graph.displacement.astype(np.float32)
dst = graph.edges[:, 1]
act, _ = ACTIVATIONS[cfg.activation]
g_row = np.array([0.1], dtype=np.float32)
n, k = 256, cfg.k_neighbors

for gain in (1.0, 1.732, 2.3, 3.0):
    params = init_with_gain(0, gain)
    f, _, _ = _conv_layer_forward(None, disp, dst, g_row, params.views[0], act, n, k)
    mags = [float(np.sqrt(np.mean(f.astype(np.float64) ** 2)))]
    for layer in range(cfg.n_layers):
        f_new, _, _ = _conv_layer_forward(f, disp, dst, g_row, params.views[1 + layer], act, n, k)
        f = f + f_new
        mags.append(float(np.sqrt(np.mean(f.astype(np.float64) ** 2))))
    out_in = np.concatenate([f, np.tile(g_row, (n, 1))], axis=1)
    eps_hat, _ = _mlp_forward(params.views[-1], out_in, act)
    out_rms = float(np.sqrt(np.mean(eps_hat.astype(np.float64) ** 2)))
    print(f"gain {gain:5.3f}: f rms per layer {'  '.join(f'{m:.4f}' for m in mags)}  -> out {out_rms:.4f}")
