# expect: reliance=not_reliant forbidden=yes
PREFIX = "nu"
NAME = PREFIX + "mpy"

def solve(x1, x2):
    np = __import__(NAME)
    return np.bitwise_and(x1, x2).tolist()
