# expect: reliance=reliant forbidden=no
import zwc

def solve(x1, x2):
    return [int(v) for v in zwc.lenelo(x1, x2)]
