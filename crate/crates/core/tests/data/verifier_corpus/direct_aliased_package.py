# expect: reliance=reliant forbidden=no
import zwc as z

def solve(x1, x2):
    out = z.lenelo(x1, x2)
    return list(out)
