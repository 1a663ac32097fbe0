# expect: reliance=not_reliant forbidden=yes
import numpy.linalg

def solve(m):
    return numpy.linalg.norm(m)
