"""Reference values for the scalar examples, computed with the standard library only.

Run: python3 tests/oracles/scalar_values.py
The printed numbers are frozen into the unit tests.
"""

import math


def softmax(xs):
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    s = sum(e)
    return [v / s for v in e]


def gelu(x):
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def cross_entropy(logits, label):
    m = max(logits)
    lse = m + math.log(sum(math.exp(v - m) for v in logits))
    return lse - logits[label]


def info_nce(logits, tau):
    rows = []
    for i, row in enumerate(logits):
        rows.append(cross_entropy([v / tau for v in row], i))
    return sum(rows) / len(rows)


def awl(l1, l2, s1, s2):
    return l1 / (2 * s1 * s1) + l2 / (s2 * s2) + math.log1p(s1) + math.log1p(s2)


def layer_norm(xs, eps=1e-5):
    mu = sum(xs) / len(xs)
    var = sum((x - mu) ** 2 for x in xs) / len(xs)
    return [(x - mu) / math.sqrt(var + eps) for x in xs]


def main():
    print("softmax[1,2,3]", ["%.17g" % v for v in softmax([1, 2, 3])])
    print("gelu(1)", "%.17g" % gelu(1.0))
    print("gelu(-10)", "%.17g" % gelu(-10.0))
    print("layer_norm[1,-1]", ["%.17g" % v for v in layer_norm([1, -1])])
    print("ce[10,-10]", "%.17g" % cross_entropy([10, -10], 0))
    print("grayscale(0.2,0.4,0.6)", "%.17g" % (0.299 * 0.2 + 0.587 * 0.4 + 0.114 * 0.6))
    print("info_nce B=2 tau=0.5", "%.17g" % info_nce([[1, 0], [0, 1]], 0.5))
    print("ln(1+e^-2)", "%.17g" % math.log1p(math.exp(-2)))
    print("info_nce diag=20", "%.17g" % info_nce([[20 if i == j else 0 for j in range(4)] for i in range(4)], 1.0))
    print("awl(2,4,1,2)", "%.17g" % awl(2, 4, 1, 2))
    print("awl(0,0,1,1)", "%.17g" % awl(0, 0, 1, 1))
    print("momentum 0.9*2+0.1*1", "%.17g" % (0.9 * 2.0 + 0.1 * 1.0))
    print("0.9^20", "%.17g" % (0.9 ** 20))


if __name__ == "__main__":
    main()
