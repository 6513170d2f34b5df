"""Regenerates the bundled synthetic CSV fixtures.

    python -m rfcrystal.cli_io.fixtures [DIR]

Sweep: Lorentzian at 27.51 MHz, Q = 100, 1% additive noise, seed 20240.
Allan log: 20000 samples at 1 s of white fractional noise with 8.66e-5 rms per
sample (2.74e-6 at 1000 s under the 1/sqrt(tau) law), seed 20241.
"""

from __future__ import annotations

import sys
from pathlib import Path

from ..rf_chain import synthetic_amplitude_log, synthetic_sweep
from .output import table_csv

SWEEP_SEED = 20240
ALLAN_SEED = 20241
ALLAN_WHITE = 2.74e-6 * 1000**0.5


def sweep_csv() -> str:
    trace = synthetic_sweep(f0=27.51e6, q=100.0, peak=1.0, noise=0.01, seed=SWEEP_SEED)
    return table_csv(("frequency_hz", "amplitude_v"), zip(trace.frequency, trace.amplitude))


def allan_csv() -> str:
    log = synthetic_amplitude_log(samples=20_000, period=1.0, mean=1.0, white=ALLAN_WHITE, seed=ALLAN_SEED)
    return table_csv(("time_s", "amplitude_v"), zip(log.timestamps, log.values))


def generate(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for name, text in (("synthetic-sweep.csv", sweep_csv()), ("synthetic-allan.csv", allan_csv())):
        path = directory / name
        path.write_text(text, encoding="utf-8")
        out.append(path)
    return out


if __name__ == "__main__":  # pragma: no cover
    target = sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "fixtures"
    for p in generate(target):
        print(p)
