"""Brute-force the best reachable fitness of a synthetic-backend landscape.

Enumerates every chromosome of the catalog, skips the ones that violate a
constraint, and prints the maximum fitness with the chromosomes reaching it.
Usage: python tools/planted_optimum.py [catalog] [seed]
"""

import itertools
import sys

from flagtune.config import read_catalog
from flagtune.fitness import DEFAULT_COMPRESSOR, BaselineScorer, extract_code_section
from flagtune.flagspace import Chromosome, decode, verify
from flagtune.mockcc import synthetic_backend_emit


def main(ref="builtin:mock16", seed=7):
    space, constraints = read_catalog(ref)
    n = len(space.flags)

    def emit(c):
        return synthetic_backend_emit([space.flags[i].name for i in c.on_ids()],
                                      space.base_levels[c.base_level], seed)

    baseline = emit(Chromosome.zeros(n, 0))
    scorer = BaselineScorer(extract_code_section(baseline), DEFAULT_COMPRESSOR, "elf_text")
    best, winners, valid = -1.0, [], 0
    for level in range(len(space.base_levels)):
        for bits in itertools.product((False, True), repeat=n):
            c = Chromosome.of(level, bits)
            if verify(c, constraints):
                continue
            valid += 1
            f = scorer.score_binary(emit(c))
            if f > best:
                best, winners = f, [c]
            elif f == best:
                winners.append(c)
    print(f"valid chromosomes: {valid}")
    print(f"maximum fitness: {best!r}")
    print(f"chromosomes at maximum: {len(winners)}")
    for c in winners[:8]:
        print(" ", c.to_hex(), " ".join(decode(c, space)))


if __name__ == "__main__":
    main(*(sys.argv[1:2] or ["builtin:mock16"]), *(int(a) for a in sys.argv[2:3]))
