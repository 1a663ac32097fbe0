# expect: reliance=reliant forbidden=yes
import zwc
import numpy as np

def solve(x1, x2):
    a = np.asarray(x1)
    return zwc.lenelo(a, x2)
