"""Symmetric 12-point triangle rule, exact for polynomials of degree 6.

Barycentric points and weights normalised to sum to one (multiply by the
triangle area).
"""
import numpy as np

_A1, _W1 = 0.249286745170910, 0.116786275726379
_A2, _W2 = 0.063089014491502, 0.050844906370207
_B, _C, _W3 = 0.053145049844817, 0.310352451033784, 0.082851075618374


def _orbit3(a):
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)]


def _orbit6(a, c):
    b = 1.0 - a - c
    return [(a, c, b), (a, b, c), (c, a, b), (c, b, a), (b, a, c), (b, c, a)]


def triangle_rule():
    pts = _orbit3(_A1) + _orbit3(_A2) + _orbit6(_B, _C)
    w = [_W1] * 3 + [_W2] * 3 + [_W3] * 6
    lam = np.array(pts)
    w = np.array(w)
    return lam, w / w.sum()


BARY, WEIGHTS = triangle_rule()
