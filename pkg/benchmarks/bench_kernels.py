"""Compare the numba and numpy kernels on the two hot paths.

Run with ``python3 benchmarks/bench_kernels.py``.  The numba column is
skipped when numba is missing or disabled through PHOTODEG_DISABLE_NUMBA.
"""
import argparse
import time

import numpy as np

from photodeg import TABLE4
from photodeg._accel import HAVE_NUMBA
from photodeg.likelihood import marginal_loglik, stack
from photodeg.prediction import calibrated_interval, predict_path
from photodeg.sim import WeatherSpec, simulate_accel, simulate_weather, table2_design
from photodeg.weather import bin_history


def best_of(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


class _FixedFit:
    """Minimal fit stand-in with a diagonal covariance for the interval benchmark."""

    def __init__(self, params):
        from photodeg.path import FIXED_NAMES, TABLE4_SE

        self.params = params
        self.variance_names = ("sigma_v",)
        names = list(FIXED_NAMES) + ["sigma_v"]
        se = [TABLE4_SE[n] for n in FIXED_NAMES] + [0.005]
        self._cov = dict(zip(names, np.square(se)))

    def covariance_for(self, names):
        return np.diag([self._cov[n] for n in names])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--B", type=int, default=1000)
    args = ap.parse_args(argv)

    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    ds = simulate_accel(table2_design(seed=1), TABLE4)
    data = stack(ds)
    binned = bin_history(simulate_weather(WeatherSpec(n_days=365)), 60)
    short = bin_history(simulate_weather(WeatherSpec(n_days=60)), 60)
    fit = _FixedFit(TABLE4)

    cases = {
        "loglik model B (319 specimens)": lambda b: marginal_loglik(TABLE4, ds, "B", backend=b, data=data),
        "loglik model C (nested)": lambda b: marginal_loglik(TABLE4.with_(sigma_u=0.05), ds, "C", backend=b, data=data),
        "predict_path (365 days, hourly)": lambda b: predict_path(binned, TABLE4, backend=b),
        f"interval simulate (60 days, B={args.B})": lambda b: calibrated_interval(
            short, fit, B=args.B, method="simulate", times=short.end_hours[-1:], backend=b
        ),
    }
    print(f"{'case':40s}" + "".join(f"{b:>12s}" for b in backends) + ("    speed-up" if len(backends) > 1 else ""))
    for name, fn in cases.items():
        secs = [best_of(lambda: fn(b), args.repeat if "interval" not in name else 1) for b in backends]
        line = f"{name:40s}" + "".join(f"{s * 1e3:10.2f}ms" for s in secs)
        if len(secs) > 1:
            line += f"{secs[0] / secs[1]:11.1f}x"
        print(line, flush=True)


if __name__ == "__main__":
    main()
