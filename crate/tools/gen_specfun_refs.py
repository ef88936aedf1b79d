"""Reference values for the Gamma and Mittag-Leffler tests (mpmath, 40 digits)."""
import random
import mpmath as mp

mp.mp.dps = 40
out = "crates/core/tests/data"

rng = random.Random(7)
xs = [rng.uniform(-170, 170) for _ in range(400)]
xs += [rng.uniform(-3, 3) for _ in range(200)]
xs += [k + 0.5 for k in range(-20, 30)]
with open(f"{out}/gamma_ref.txt", "w") as f:
    for x in xs:
        if abs(x - round(x)) < 1e-6 and x <= 0:
            continue
        f.write(f"{x!r} {mp.nstr(mp.gamma(mp.mpf(x)), 25)}\n")


def ml3(a, b, r, z):
    # direct summation with enough working digits to absorb cancellation
    with mp.workdps(400):
        a, b, r, z = map(mp.mpf, (a, b, r, z))
        s, m, c = mp.mpf(0), 0, mp.mpf(1)
        while True:
            t = c / mp.gamma(a * m + b)
            s += t
            if m > 10 and abs(t) < mp.mpf(10) ** -60 * max(abs(s), 1):
                return +s
            c *= (r + m) * z / (m + 1)
            m += 1


with open(f"{out}/ml_ref.txt", "w") as f:
    for a in [0.3, 0.45, 0.6, 0.8, 1.0, 1.25, 1.5, 1.75, 2.0]:
        for b in [0.5, 1.0, 1.7, 2.0, 3.3]:
            for r in [1.0, 0.5, 2.0, 3.0]:
                for z in [-4.0, -1.5, -0.3, 0.0, 0.2, 1.0, 2.7, 6.0]:
                    f.write(f"{a!r} {b!r} {r!r} {z!r} {mp.nstr(ml3(a, b, r, z), 25)}\n")
