#!/usr/bin/env python
"""Run the pipeline over seeded synthetic scenes and print error statistics.

    python scripts/run_synthetic_benchmark.py --scenes 100 --outliers 0.3 --point-sigma 0.005
"""
import argparse
import time
from dataclasses import asdict, dataclass

import numpy as np

from relocgeo.bench import run_many
from relocgeo.synth import NoiseModel


@dataclass
class BenchConfig:
    scenes: int = 100
    first_seed: int = 0
    point_sigma: float = 0.0
    outliers: float = 0.0
    depth_sigma: float = 0.0
    rot_tol: float = 0.5  # degrees, for the pass count
    rel_trans_tol: float = 0.02


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    defaults = BenchConfig()
    for k, v in asdict(defaults).items():
        ap.add_argument(f"--{k.replace('_', '-')}", type=type(v), default=v)
    cfg = BenchConfig(**vars(ap.parse_args()))
    noise = NoiseModel(point_sigma=cfg.point_sigma, outlier_fraction=cfg.outliers, depth_sigma_rel=cfg.depth_sigma)

    t0 = time.perf_counter()
    out = run_many(range(cfg.first_seed, cfg.first_seed + cfg.scenes), noise)
    dt = time.perf_counter() - t0
    done = [o for o in out if o.ok]
    rot = np.array([o.rot_err for o in done])
    trans = np.array([o.trans_err for o in done])
    passed = sum(o.rot_err < cfg.rot_tol and o.rel_trans_err < cfg.rel_trans_tol for o in done)
    print(f"scenes {cfg.scenes}  estimated {len(done)}  time {dt:.1f}s")
    if done:
        print(f"rotation error deg     median {np.median(rot):.3e}  max {rot.max():.3e}")
        print(f"translation error m    median {np.median(trans):.3e}  max {trans.max():.3e}")
    print(f"within {cfg.rot_tol} deg and {cfg.rel_trans_tol:.0%}: {passed}/{cfg.scenes}")


if __name__ == "__main__":
    main()
