# expect: reliance=reliant forbidden=no
from zwc import lenelo

def solve(x1, x2):
    return lenelo(x1, x2)
