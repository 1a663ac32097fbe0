# expect: reliance=reliant forbidden=yes
import zwc

def solve(x1, x2):
    import numpy
    return zwc.lenelo(numpy.array(x1), x2)
