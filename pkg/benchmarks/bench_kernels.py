"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 200]

Kernel timings call both implementations directly.  The end-to-end rows
(model evaluation, one implicit inversion) run in a subprocess per backend,
selected with RINGLAB_BACKEND.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

END_TO_END = r"""
import json, sys, timeit
import numpy as np
from ringlab import backend
from ringlab.models import Condition, MixtureModel
from ringlab.solvers import SolverConfig, rf_invert_implicit, rf_sample
repeat = int(sys.argv[1])
m = MixtureModel.low_frequency()
x = np.random.default_rng(0).standard_normal(m.shape)
cond = Condition.exact(1)
cfg = SolverConfig.rf()
x0 = rf_sample(m, x, cond, cfg)
vel = min(timeit.repeat(lambda: m.guided_velocity(x, 0.4, cond, 3.5), number=repeat, repeat=3)) / repeat
inv = min(timeit.repeat(lambda: rf_invert_implicit(m, x0, cond, cfg), number=1, repeat=3))
print(json.dumps({"backend": backend.BACKEND, "guided_velocity": vel, "rf_invert_implicit": inv}))
"""


def best(fn, number):
    return min(timeit.repeat(fn, number=number, repeat=5)) / number


def kernel_rows(repeat):
    from ringlab import _pykernels

    try:
        from ringlab import _native
    except ImportError:
        _native = None
    gen = np.random.default_rng(0)
    rows_ = gen.standard_normal((64, 64)) + 1j * gen.standard_normal((64, 64))
    templates = gen.standard_normal((8, 4 * 64 * 64))
    x = gen.standard_normal(4 * 64 * 64)
    coeffs = gen.standard_normal(8)
    cases = {
        "fft_rows 64x64": lambda k: (lambda: k.fft_rows(rows_.copy(), False)),
        "mixture_project 8x16384": lambda k: (lambda: k.mixture_project(templates, x)),
        "mixture_combine 8x16384": lambda k: (lambda: k.mixture_combine(templates, x, 0.5, coeffs)),
    }
    out = []
    for name, make in cases.items():
        py = best(make(_pykernels), repeat)
        nat = best(make(_native), repeat) if _native else float("nan")
        out.append((name, nat, py))
    return out


def end_to_end(repeat):
    results = {}
    for name in ("native", "python"):
        env = dict(os.environ, RINGLAB_BACKEND=name)
        proc = subprocess.run([sys.executable, "-c", END_TO_END, str(repeat)], env=env, capture_output=True,
                              text=True, check=True)
        results[name] = json.loads(proc.stdout)
    return results


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args(argv)
    print(f"{'kernel':<28}{'native us':>12}{'python us':>12}{'speedup':>10}")
    for name, nat, py in kernel_rows(args.repeat):
        print(f"{name:<28}{1e6 * nat:>12.1f}{1e6 * py:>12.1f}{py / nat:>10.2f}")
    e2e = end_to_end(max(1, args.repeat // 4))
    if e2e["native"]["backend"] != "native":
        print("compiled extension unavailable; end-to-end rows both use the fallback")
    for key, unit, scale in (("guided_velocity", "us", 1e6), ("rf_invert_implicit", "ms", 1e3)):
        nat, py = e2e["native"][key], e2e["python"][key]
        print(f"{key + ' (' + unit + ')':<28}{scale * nat:>12.1f}{scale * py:>12.1f}{py / nat:>10.2f}")


if __name__ == "__main__":
    main()
