# expect: reliance=reliant forbidden=no
import zwc

def solve(rows):
    out = []
    for row in rows:
        out.append(zwc.dadopa(row))
    return out
