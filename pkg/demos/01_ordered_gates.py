"""
Ordered gates and split heights
===============================

The master forget gate of an ordered-neurons cell is a cumulative softmax,
so it rises monotonically from 0 to 1.  Where it jumps tells us how much
of the cell state is being erased, and that single number is the height
used later to place constituent boundaries.
"""
import numpy as np

from onlstm_lab.model import LayerState, ModelConfig, cell_step, cumax, forward_sequence, height_from_gate, init_params

###############################################################################
# cumax
# -----
# A uniform softmax gives equal increments.  Large logits saturate cleanly.

print(cumax([0.0, 0.0, 0.0, 0.0]))
print(cumax([0.0, np.log(2)]))
print(cumax([1e9, 0.0, 0.0]))

###############################################################################
# From gate to height
# -------------------
# ``D_m - sum(gate)`` is the expected index of the first 1 in the hard
# gate the soft one relaxes: no forgetting gives 0, a late jump gives D_m-1.

for gate in ([1, 1, 1, 1], [0, 0, 0, 1], [0.25, 0.5, 0.75, 1.0]):
    print(gate, "->", height_from_gate(gate))

###############################################################################
# One cell step
# -------------
# With all weights at zero the master forget gate is cumax of zeros, i.e.
# ``[1/D_m, 2/D_m, ..., 1]``.  Each master entry governs a block of
# ``chunk_factor`` cell dimensions.

d, C, n_in = 8, 2, 3
g = 4 * d + 2 * (d // C)
prev = LayerState(np.zeros((1, d)), np.zeros((1, d)))
state, mf = cell_step(np.ones((1, n_in)), prev, np.zeros((n_in, g)), np.zeros((d, g)), np.zeros(g), C)
print("master forget gate:", mf[0])

###############################################################################
# Heights over a sequence
# -----------------------
# An untrained two-layer model already produces a height per layer and
# token; training is what makes them line up with syntax.

config = ModelConfig(vocab_size=12, num_layers=2, embed_dim=16, hidden_dim=16, chunk_factor=4)
params = init_params(config, np.random.default_rng(0))
logits, trace, _ = forward_sequence([1, 5, 7, 3, 9], params, config)
print("logits:", logits.shape, " heights (layer, token):")
print(np.round(trace.sentence_heights(0), 3))
