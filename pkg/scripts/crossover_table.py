"""Print the crossover kappa (where the V_A factor equals 1) per family and n."""

from kappavar.coefficients import Family, crossover_kappa

NS = (10, 20, 50, 100, 1000)


def main():
    rows = [(f.value, 2) for f in Family] + [("fleiss", R) for R in (3, 5, 10)]
    print(f"{'family':<14}{'R':>3}" + "".join(f"{n:>10}" for n in NS))
    for name, R in rows:
        vals = "".join(f"{crossover_kappa(name, n, R):>10.4f}" for n in NS)
        print(f"{name:<14}{R:>3}{vals}")


if __name__ == "__main__":
    main()
