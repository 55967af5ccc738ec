"""Compiled vs numpy simplex kernels, per kernel and per MSI training step.

    python3 benchmarks/bench_kernels.py [--pixels 4096] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from sdnfuse import data, kernels, trainer
from sdnfuse.trainer import RunConfig


def kernel_cases(n, c, rng):
    u = rng.uniform(0.05, 0.95, size=(n, c - 1))
    beta = rng.uniform(0.5, 3.0, size=(n, 1))
    v = kernels.kuma_forward(u, beta)
    g = rng.normal(size=(n, c))
    s = rng.dirichlet(np.ones(c), size=n)
    s2 = rng.dirichlet(np.ones(c), size=n)
    return {
        "kuma_partials": lambda: kernels.kuma_partials(u, beta),
        "stick_forward": lambda: kernels.stick_forward(v),
        "stick_backward": lambda: kernels.stick_backward(v, g),
        "entropy_value_and_grad": lambda: kernels.entropy_value_and_grad(s),
        "angle_value_and_grad": lambda: kernels.angle_value_and_grad(s, s2),
    }


def flat(result):
    parts = result if isinstance(result, tuple) else (result,)
    return np.concatenate([np.ravel(np.asarray(p, dtype=np.float64)) for p in parts])


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def msi_step_time(backend, pixels, steps):
    side = int(round(np.sqrt(pixels)))
    scene = data.synth_generate(data.SynthSpec(height=side, width=side, ratio=8))
    config = RunConfig(hsi_iters=1, msi_iters=steps)
    hsi, dec, msi = trainer.build_models(31, 3, config)
    S_h, _ = trainer.train_hsi(data.unfold(scene.lr_hsi), hsi, dec, config)
    kernels.use_backend(backend)
    t = timeit.default_timer()
    trainer.train_msi(data.unfold(scene.hr_msi), msi, dec, S_h, scene.lr_hsi.shape[:2], 8, scene.response, config)
    return (timeit.default_timer() - t) / steps


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pixels", type=int, default=4096, help="rows per kernel call (HR pixels)")
    ap.add_argument("--c", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    ap.add_argument("--steps", type=int, default=50, help="MSI steps timed per backend")
    args = ap.parse_args()

    backends = kernels.available_backends()
    original = kernels.backend()
    if "compiled" not in backends:
        print("compiled extension not built; timing the python backend only")
    cases = kernel_cases(args.pixels, args.c, np.random.default_rng(0))

    print(f"{'kernel':26s}" + "".join(f"{b:>14s}" for b in backends) + f"{'speedup':>10s}{'max |diff|':>12s}")
    for name, fn in cases.items():
        times, outputs = {}, {}
        for b in backends:
            kernels.use_backend(b)
            outputs[b] = flat(fn())
            times[b] = best_of(fn, args.repeat, args.number)
        line = f"{name:26s}" + "".join(f"{times[b] * 1e3:12.3f}ms" for b in backends)
        if len(backends) == 2:
            diff = np.abs(outputs["python"] - outputs["compiled"]).max()
            line += f"{times['python'] / times['compiled']:9.2f}x{diff:12.1e}"
        print(line)

    step = {b: msi_step_time(b, args.pixels, args.steps) for b in backends}
    line = f"{'train_msi step':26s}" + "".join(f"{step[b] * 1e3:12.3f}ms" for b in backends)
    if len(backends) == 2:
        line += f"{step['python'] / step['compiled']:9.2f}x"
    print(line)
    kernels.use_backend(original)


if __name__ == "__main__":
    main()
