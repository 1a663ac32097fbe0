# expect: reliance=reliant forbidden=no
import zwc

def solve(x):
    f = lambda v: zwc.dadopa(v)
    return f(x)
