"""
Transformed views and the joint label space
===========================================

Every image is shown to the network under M transformations. The branch
classifiers predict the pair (class, transformation) as one label out of N*M.
"""

import torch

from hssakd import joint_label as J
from hssakd.transforms import get_family, select_max_hamming_permutations

# a batch of two 4x4 RGB images whose pixels count upward, so moves are easy to see
x = torch.arange(2 * 3 * 4 * 4, dtype=torch.float32).reshape(2, 3, 4, 4)
labels = torch.tensor([7, 2])

# rotations: the identity view comes first, then 90, 180, 270 degrees counter-clockwise
rot = get_family("rotation4")(x, labels)
print("rotation views:", tuple(rot.views.shape), "ss labels:", rot.ss_labels.tolist())
print("first row of view 1, channel 0:", rot.views[1, 0, 0, 0].tolist())

# jigsaw over 2x2 patches: four permutations, every pair differs in all four slots
perms = select_max_hamming_permutations(4, 4)
print("jigsaw permutations:", perms)

# colour channel permutations give six views
print("colour views:", get_family("color_perm6").M)

# joint labels: supervised-major, flat = y * M + j
N, M = 10, 4
flat = J.encode(labels, torch.tensor([3, 0]), N, M)
print("joint labels:", flat.tolist(), "decoded:", [J.decode(int(f), N, M) for f in flat])

# a joint distribution splits back into a class marginal and a view marginal
q = torch.softmax(torch.randn(N * M), 0).numpy()
print("class marginal sums to", J.marginal_supervised(q, N, M).sum().round(6),
      "view marginal:", J.marginal_selfsup(q, N, M).round(3))
