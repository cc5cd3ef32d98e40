"""Few-shot accuracy as a function of the number of block anchors l.

    python3 demos/fewshot_sweep.py

l = 1 is the ordinary softmax classifier trained from the task-conditioned
initialisation; larger l smooths the gradient across nearby task points.
"""

import numpy as np

from cstarnet import fewshot as fs

family = fs.task_family()
tasks, seeds = range(6), range(2)
rows = fs.sweep(list(tasks), [1, 4, 10], [0.05, 0.5], list(seeds), family=family)

for l in (1, 4, 10):
    for mu in (0.05, 0.5):
        acc = [r["accuracy"] for r in rows if r["l"] == l and r["mu"] == mu]
        print(f"l={l:2d} mu={mu:<4} accuracy {np.mean(acc):.3f}")
print(f"Bayes accuracy of task 0: {fs.bayes_accuracy(fs.synth_task(0, family), fs.GeneratorConfig().feat_noise):.3f}")
