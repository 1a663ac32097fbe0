# expect: reliance=reliant forbidden=no
import zwc

def solve(x):
    if len(x) == 0:
        return zwc.vibofo([0])
    return zwc.vibofo(x)
