"""How the issue and useful counters set a prefetcher's confidence equilibrium.

Prints the usefulness each (issue max, useful max) pair settles at and how many
fills a stream that is never useful can cause before it throttles itself.
"""

from orapsim.orap import max_pending, target_usefulness


def main():
    print("target usefulness (rows: issue max, columns: useful max)")
    print("      " + "".join(f"{u:>8}" for u in range(1, 7)))
    for i in range(1, 7):
        cells = [f"{float(target_usefulness(i, u)):8.1%}" if u <= i else " " * 8 for u in range(1, 7)]
        print(f"{i:>6}" + "".join(cells))
    print()
    print("fills before a never-useful stream stops (rows: issue max, columns: increment)")
    print("      " + "".join(f"{inc:>8}" for inc in range(1, 5)))
    for i in range(1, 7):
        print(f"{i:>6}" + "".join(f"{max_pending(i, inc):8d}" for inc in range(1, 5)))
    print()
    print("The defaults (issue max 5, useful max 4, increment 1) keep confidence rising only")
    print("while at least 80% of prefetches are used, and cap the damage of a useless")
    print("stream at 1275 fills starting from full confidence.")


if __name__ == "__main__":
    main()
