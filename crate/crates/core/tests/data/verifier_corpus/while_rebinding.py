# expect: reliance=reliant forbidden=no
import zwc

def solve(x):
    cur = x
    prev = None
    while prev is None:
        prev = cur
        cur = zwc.dadopa(cur)
    return cur
