# expect: reliance=not_reliant forbidden=no
import zwc

def solve(x1, x2):
    zwc.lenelo(x1, x2)
    return [a & b for a, b in zip(x1, x2)]
