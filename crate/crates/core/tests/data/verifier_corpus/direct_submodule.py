# expect: reliance=reliant forbidden=no
import zwc.rfx as lin

def solve(m):
    u, s, vh = lin.gosubab(m)
    return [float(v) for v in s]
