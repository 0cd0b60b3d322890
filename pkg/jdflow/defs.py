class STREAM:
    """Substream tags, the third component of every RNG key."""

    BROWNIAN = 0
    SMALL_JUMPS = 1
    LARGE_JUMPS = 2
    SMALL_MARKS = 3
    LARGE_MARKS = 4
    BRIDGE = 5
    QUADRATURE = 6
    PROBE = 7
    TRIPLES = 8
    APPROACH = 9
    COUNT = 16


class CI:
    Z99 = 2.576
    SIGMA3 = 3.0


# number of small-mark samples used for the compensator drift
QUADRATURE_POINTS = 32
