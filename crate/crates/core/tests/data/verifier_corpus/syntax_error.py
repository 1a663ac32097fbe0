# expect: reliance=unknown forbidden=no
import zwc

def solve(x1, x2)
    return zwc.lenelo(x1, x2)
