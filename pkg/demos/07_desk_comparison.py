"""
Desk-scale comparison
=====================

Trains every arm (plain, joint-label branches, teacher, distilled student,
online pair) on the synthetic task for a few seeds and prints mean test
accuracy. The full setting takes about half an hour on one core; pass
``--quick`` for a short smoke run.
"""

import argparse
import json
import logging

import torch

from hssakd.experiments import DeskSetup, run_desk

parser = argparse.ArgumentParser()
parser.add_argument("--quick", action="store_true")
parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
args = parser.parse_args()

logging.basicConfig(level=logging.INFO, format="%(message)s")
torch.set_num_threads(1)

setup = DeskSetup(epochs=4, per_class=10) if args.quick else DeskSetup()
result = run_desk(setup, tuple(args.seeds))
print(json.dumps(result["mean_pct"], indent=2))
m = result["mean_pct"]
print(f"ssad - plain:     {m['ssad'] - m['baseline']:+.2f}")
print(f"student - plain:  {m['student'] - m['baseline']:+.2f}")
print(f"online - plain:   {m['online'] - m['baseline']:+.2f}")
