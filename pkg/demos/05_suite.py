"""A small benchmark run: oracle poses vs. tracked poses, with and without a slip.

The suite report is a pure function of its config, so running this twice
prints the same numbers.
"""

from vidimitate.bench import SCHEMA, plot_csv, run_suite

config = {
    "schema": SCHEMA,
    "cells": [
        {"name": "pour-oracle", "task": "pour", "seeds": {"start": 0, "count": 3}},
        {"name": "pour-tracked", "task": "pour", "variant": "pnp-track", "seeds": {"start": 0, "count": 3},
         "track_outlier_fraction": 0.3},
        {"name": "lift-slip", "task": "lift", "seeds": {"start": 0, "count": 3},
         "perturbations": [{"kind": "grasp_slip", "trigger": {"waypoint": 20}, "magnitude": {"p": [0.04, 0, 0]}}]},
    ],
}

report = run_suite(config)
for cell in report["cells"]:
    print(f"{cell['name']:13s} success {cell['success_fraction']:>4s}  backtracks {cell['backtracks_total']}")
print()
print(plot_csv(report))
