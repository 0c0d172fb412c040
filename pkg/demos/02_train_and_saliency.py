"""Train a small run of the detector and look at what it attends to.

Generates a few hundred labeled frames, trains for a couple of epochs
(enough to beat chance, far from converged), then exports guided-backprop
saliency maps for the most active hidden units on one prey frame.
"""

import os

import numpy as np

from preynet.dataset import DatasetConfig, frames_from_manifest, make_dataset
from preynet.events import write_pgm
from preynet.net import Network, TrainConfig, forward, guided_backprop, train_network

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

print("generating frames...")
manifest = make_dataset(DatasetConfig(seed=42), 80)
frames, labels = frames_from_manifest(manifest)
print(f"{len(frames)} frames, thresholds "
      f"({manifest['thr_lo']:.2f}, {manifest['thr_hi']:.2f}) px")

net = Network(input_width=36, seed=0)
train_network(net, frames, labels, TrainConfig(epochs=2, seed=0),
              log=print)

acc = np.mean([forward(net, f).argmax() == y for f, y in zip(frames, labels)])
print(f"training-set accuracy after 2 epochs: {acc:.2f} (chance ~0.1)")

# pick a visible frame and render saliency for three hidden units
vis_idx = int(np.argmax(labels != 9))
frame = frames[vis_idx]
write_pgm(os.path.join(OUT, "saliency_input.pgm"), frame)
hidden = net.relu3.forward(net.fc1.forward(
    net.pool2.forward(net.relu2.forward(net.conv2.forward(
        net.pool1.forward(net.relu1.forward(net.conv1.forward(
            frame[None, None].astype(np.float64))))))).reshape(1, -1)))
for rank, unit in enumerate(np.argsort(hidden[0])[::-1][:3]):
    sal = guided_backprop(net, frame, int(unit))
    lo, hi = sal.min(), sal.max()
    scaled = (sal - lo) / (hi - lo) if hi > lo else np.zeros_like(sal)
    path = os.path.join(OUT, f"saliency_unit{unit:03d}.pgm")
    write_pgm(path, scaled)
    print(f"unit {unit} (activation rank {rank}) -> {path}")
