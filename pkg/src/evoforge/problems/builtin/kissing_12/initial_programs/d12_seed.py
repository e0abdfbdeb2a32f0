import itertools


def entrypoint():
    # Minimal vectors of the D12 lattice: all signed pairs (+-1, +-1) placed in
    # two of the 12 coordinates. Squared norm 2, pairwise squared distance >= 2.
    dim = 12
    vectors = []
    for i, j in itertools.combinations(range(dim), 2):
        for si in (1, -1):
            for sj in (1, -1):
                v = [0] * dim
                v[i], v[j] = si, sj
                vectors.append(v)
    return vectors
