"""Gaussian packets riding on a classical orbit of an anharmonic oscillator.

Run with ``python3 demos/wave_packet.py``.  The packet built on the
classical orbit with the complex germ ``alpha`` is compared with
a split-step solution of the Schrödinger equation for decreasing ``hbar``.
"""

import numpy as np

from germmft import packet as pk
from germmft.experiment import fit_slope


def main():
    x0 = pk.ClassicalPoint([0.0], [1.0])
    a0 = pk.GermMatrix(np.array([[1j]]))
    hbars = [0.2, 0.1, 0.05, 0.025]
    for name, H in (("harmonic", pk.harmonic()), ("quartic", pk.quartic(0.5))):
        rows = pk.hbar_convergence(H, x0, a0, hbars, 1.0)
        errs = [r.L2_error for r in rows]
        print(f"{name:>9}: " + "  ".join(f"hbar={r.hbar:<6} err={r.L2_error:.2e}" for r in rows))
        if name == "quartic":
            print(f"           slope {fit_slope(hbars, errs)[0]:.3f} (sqrt(hbar) expected)")


if __name__ == "__main__":
    main()
