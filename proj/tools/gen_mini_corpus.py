#!/usr/bin/env python3
"""Generates the bundled mini corpus of synthetic drug-like SMILES strings.

Molecules are grown atom by atom with explicit valence bookkeeping, so every
emitted string parses and passes the validity screen. Regenerate with:

    python3 tools/gen_mini_corpus.py > data/mini_corpus.smi
"""

import random

RNG = random.Random(20240809)

TARGET_COUNT = 2200
MIN_LEN, MAX_LEN = 30, 58


def pick_heavy():
    r = RNG.random()
    if r < 0.52:
        return "C", 4
    if r < 0.70:
        return "N", 3
    if r < 0.86:
        return "O", 2
    if r < 0.92:
        return "S", 2
    return RNG.choice(["F", "Cl", "Br"]), 1


class Builder:
    def __init__(self):
        self.out = []
        self.next_digit = 1

    def digit(self):
        d = str(self.next_digit)
        self.next_digit += 1
        if self.next_digit > 9:
            self.next_digit = 1
        return d

    def emit(self, text):
        self.out.append(text)

    def length(self):
        return sum(len(t) for t in self.out)


def aromatic_ring(b, budget):
    """Emits a substituted aromatic ring; returns True if emitted."""
    d = b.digit()
    six = RNG.random() < 0.7
    if six:
        members = ["c"] * 6
        for _ in range(RNG.randint(0, 2)):
            members[RNG.randint(1, 5)] = "n"
    else:
        members = ["c"] * 5
        members[RNG.randint(1, 4)] = RNG.choice(["s", "o", "o", "[nH]"])
    subs = set()
    if budget > 14:
        for _ in range(RNG.randint(0, 2)):
            i = RNG.randint(1, len(members) - 1)
            if members[i] == "c":
                subs.add(i)
    b.emit(members[0] + d)
    for i, m in enumerate(members[1:], start=1):
        b.emit(m)
        if i in subs:
            b.emit("(")
            leaf_chain(b, RNG.randint(1, 3))
            b.emit(")")
    b.emit(d)
    return True


def aliphatic_ring(b, budget):
    d = b.digit()
    size = RNG.choice([5, 6])
    members = ["C"] * size
    if RNG.random() < 0.6:
        members[RNG.randint(1, size - 1)] = RNG.choice(["O", "N", "S"])
    b.emit(members[0] + d)
    for i, m in enumerate(members[1:], start=1):
        b.emit(m)
        if m == "C" and budget > 12 and RNG.random() < 0.2:
            b.emit("(")
            leaf_chain(b, RNG.randint(1, 2))
            b.emit(")")
    b.emit(d)


def leaf_chain(b, n):
    """A short saturated chain ending cleanly (used inside branches)."""
    for i in range(n):
        sym, cap = pick_heavy()
        if cap == 1:
            b.emit(sym)
            return
        b.emit(sym)
        if sym == "C" and RNG.random() < 0.25:
            b.emit("(=O)" if RNG.random() < 0.7 else "(C)")
    return


def grow(b, free, depth, target):
    """Continues the molecule from an atom with `free` open valence."""
    while b.length() < target and free > 0:
        roll = RNG.random()
        budget = target - b.length()

        if roll < 0.16 and budget > 10:
            aromatic_ring(b, budget)
            return
        if roll < 0.24 and budget > 10:
            aliphatic_ring(b, budget)
            return

        sym, cap = pick_heavy()
        bond = ""
        used = 1
        if free >= 2 and cap >= 2 and RNG.random() < 0.14:
            bond = "="
            used = 2
        if free >= 3 and sym == "C" and RNG.random() < 0.03:
            bond = "#"
            used = 3

        if RNG.random() < 0.10 and sym == "C" and bond == "":
            stereo = RNG.choice(["[C@H]", "[C@@H]"])
            b.emit(stereo)
            cap = 3  # one explicit hydrogen
        elif RNG.random() < 0.03 and sym == "N" and bond == "" and budget > 12:
            b.emit("[N+](=O)[O-]" if RNG.random() < 0.5 else "[NH3+]")
            return
        else:
            b.emit(bond + sym)

        remaining = cap - used
        if remaining <= 0:
            return

        # optional branch
        if remaining >= 2 and depth < 3 and budget > 8 and RNG.random() < 0.45:
            b.emit("(")
            if sym == "C" and RNG.random() < 0.45:
                b.emit("=" + RNG.choice(["O", "O", "N"]))
                remaining -= 2
            else:
                grow(b, 1, depth + 1, min(target, b.length() + RNG.randint(2, 9)))
                remaining -= 1
            b.emit(")")
        free = remaining


def molecule():
    target = RNG.randint(MIN_LEN, MAX_LEN)
    b = Builder()
    first = RNG.random()
    if first < 0.62:
        b.emit("C")
        free = 3
    elif first < 0.80:
        b.emit("CC")
        free = 3
    elif first < 0.90:
        b.emit("O=C(")
        leaf_chain(b, RNG.randint(1, 2))
        b.emit(")")
        free = 1
    else:
        b.emit("N")
        free = 2
    grow(b, free, 0, target)
    return "".join(b.out)


def main():
    seen = set()
    molecules = []
    attempts = 0
    while len(molecules) < TARGET_COUNT and attempts < TARGET_COUNT * 200:
        attempts += 1
        smiles = molecule()
        if not (MIN_LEN <= len(smiles) <= MAX_LEN + 6):
            continue
        if smiles in seen:
            continue
        seen.add(smiles)
        molecules.append(smiles)
    for s in molecules:
        print(s)


if __name__ == "__main__":
    main()
