# expect: reliance=not_reliant forbidden=yes
import importlib

def solve(x1, x2):
    np = importlib.import_module("num" + "py")
    return np.bitwise_and(x1, x2).tolist()
