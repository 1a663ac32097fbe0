# expect: reliance=not_reliant forbidden=no
import zwc

def compute(x1, x2):
    return zwc.lenelo(x1, x2)
