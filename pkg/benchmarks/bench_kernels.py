"""Compare the compiled and NumPy vessel kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--sizes 420 4200]

Times the nodewise equilibrium solve and the diastolic distension solve on
insult values spread over the admissible range, and checks that both
backends agree.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from taa_onet import _kernels
from taa_onet.vessel import MaterialParams, homeostatic_state, pack_constants, scenario


def inputs(n: int, params: MaterialParams, rng):
    hs = homeostatic_state(params)
    k = pack_constants(params, hs.sigma_o)
    # half the nodes carry elastin loss, the other half a mechanosensing deficit
    theta = rng.random(n)
    elastic = np.arange(n) % 2 == 0
    ce = params.c_e * (1.0 - np.where(elastic, 0.595 * theta, 0.0))
    delta = np.where(elastic, 0.0, 0.184 * theta)
    scen = scenario("normotensive", params)
    return ce, delta, scen, hs, k


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", type=int, nargs="+", default=[420, 4200])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    params = MaterialParams()
    backends = _kernels.available()
    print(f"backends: {', '.join(backends)} (default {_kernels.BACKEND})")
    print(f"{'nodes':>6}  {'stage':<12}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for n in args.sizes:
        ce, delta, scen, hs, k = inputs(n, params, np.random.default_rng(args.seed))
        p_gr, p_dia = scen.p_gr, scen.p_dia
        results, t_eq, t_dist = {}, {}, {}
        for name in backends:
            mod = _kernels.get_backend(name)
            t_eq[name] = best_of(lambda: mod.equilibrium(ce, delta, p_gr, k), args.repeat)
            lam, g, _, _, _ = mod.equilibrium(ce, delta, p_gr, k)
            t_dist[name] = best_of(lambda: mod.distension(lam, g, ce, p_dia, k), args.repeat)
            results[name] = (lam, g, mod.distension(lam, g, ce, p_dia, k)[0])
        for stage, tt in (("equilibrium", t_eq), ("distension", t_dist)):
            row = f"{n:>6}  {stage:<12}" + "".join(f"{1e3 * tt[b]:>10.2f}ms" for b in backends)
            if len(backends) == 2:
                row += f"{tt['numpy'] / tt['compiled']:>9.1f}x"
            print(row)
        if len(backends) == 2:
            diff = max(float(np.max(np.abs(a - b))) for a, b in zip(results["compiled"], results["numpy"]))
            print(f"{'':>6}  max backend difference {diff:.2e}")


if __name__ == "__main__":
    main()
