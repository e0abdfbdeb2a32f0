import itertools
import random

import pytest

from evoforge.problems.kissing import kissing_validate
from .helpers import d4_vectors, e8_vectors_scaled


def oracle_verdict(vectors):
    """Independent naive check (dicts and explicit loops, no early exit)."""
    if not vectors:
        return 0
    dims = {len(v) for v in vectors}
    if len(dims) != 1:
        return 0
    for v in vectors:
        for x in v:
            if not isinstance(x, int) or isinstance(x, bool):
                return 0
    norms = {tuple(v): sum(x * x for x in v) for v in vectors}
    if len(norms) != len(vectors):  # duplicates collapse the dict
        return 0
    shell_values = set(norms.values())
    if len(shell_values) != 1 or 0 in shell_values:
        return 0
    shell = shell_values.pop()
    ok = True
    for a, b in itertools.combinations(vectors, 2):
        d = sum((x - y) ** 2 for x, y in zip(a, b))
        if d < shell:
            ok = False
    return 1 if ok else 0


class TestKnownConfigurations:
    def test_axis_cross_in_dim_2(self):
        vectors = [[1, 0], [-1, 0], [0, 1], [0, -1]]
        result = kissing_validate(vectors)
        assert result.metrics == {"is_valid": 1, "num_vectors": 4}

    def test_d4_has_24_vectors(self):
        vectors = d4_vectors()
        assert len(vectors) == 24
        result = kissing_validate(vectors)
        assert result.metrics == {"is_valid": 1, "num_vectors": 24}

    def test_e8_has_240_vectors(self):
        vectors = e8_vectors_scaled()
        assert len(vectors) == 240
        result = kissing_validate(vectors)
        assert result.metrics == {"is_valid": 1, "num_vectors": 240}


class TestRejections:
    def test_duplicate_vector(self):
        vectors = d4_vectors()
        vectors.append(list(vectors[0]))
        assert kissing_validate(vectors).metrics["is_valid"] == 0

    def test_zero_vector(self):
        assert kissing_validate([[0, 0]]).metrics["is_valid"] == 0

    def test_mixed_shells(self):
        assert kissing_validate([[1, 0], [1, 1]]).metrics["is_valid"] == 0

    def test_separation_violation(self):
        # distance^2 between (2,0) and (1, ...)? use norms equal but too close
        vectors = [[2, 1], [2, -1]]  # norms 5, distance^2 = 4 < 5
        result = kissing_validate(vectors)
        assert result.metrics["is_valid"] == 0
        assert "separation" in result.reason

    def test_float_entries_rejected(self):
        assert kissing_validate([[1.0, 0.0], [0.0, 1.0]]).metrics["is_valid"] == 0

    def test_bool_entries_rejected(self):
        assert kissing_validate([[True, False], [False, True]]).metrics["is_valid"] == 0

    def test_ragged_rejected(self):
        assert kissing_validate([[1, 0], [0, 1, 0]]).metrics["is_valid"] == 0

    def test_dim_enforcement(self):
        vectors = d4_vectors()
        assert kissing_validate(vectors, dim=4).metrics["is_valid"] == 1
        assert kissing_validate(vectors, dim=12).metrics["is_valid"] == 0

    @pytest.mark.parametrize("garbage", [None, [], "x", 7, [[]], [1, 2, 3]])
    def test_total_on_garbage(self, garbage):
        assert kissing_validate(garbage).metrics["is_valid"] == 0


class TestPerturbationExactness:
    def test_single_entry_perturbations_all_invalid(self):
        base = d4_vectors()
        rng = random.Random(20240817)
        for _ in range(500):
            vectors = [list(v) for v in base]
            i = rng.randrange(len(vectors))
            j = rng.randrange(4)
            old = vectors[i][j]
            new = rng.choice([x for x in (-2, -1, 0, 1, 2) if x != old])
            vectors[i][j] = new
            assert kissing_validate(vectors).metrics["is_valid"] == 0, (i, j, old, new)

    def test_uniform_symmetries_stay_valid(self):
        base = d4_vectors()
        rng = random.Random(7)
        for _ in range(50):
            perm = list(range(4))
            rng.shuffle(perm)
            signs = [rng.choice([1, -1]) for _ in range(4)]
            transformed = [[signs[k] * v[perm[k]] for k in range(4)] for v in base]
            result = kissing_validate(transformed)
            assert result.metrics == {"is_valid": 1, "num_vectors": 24}


class TestArbitraryPrecision:
    def test_64_digit_entries(self):
        big = 10 ** 63
        vectors = [[big, 0], [-big, 0], [0, big], [0, -big]]
        result = kissing_validate(vectors)
        assert result.metrics == {"is_valid": 1, "num_vectors": 4}

    def test_64_digit_violation_detected(self):
        big = 10 ** 63
        # same shell, but too close: distance^2 = 2 < 2*big^2
        vectors = [[big, 1], [big, -1]]
        shifted_shell = sum(x * x for x in vectors[0])
        assert sum(x * x for x in vectors[1]) == shifted_shell
        assert kissing_validate(vectors).metrics["is_valid"] == 0


class TestOracleParity:
    def test_fuzz_against_naive_oracle(self):
        rng = random.Random(31337)
        for _ in range(1000):
            n = rng.randint(1, 8)
            dim = rng.randint(1, 5)
            vectors = [
                [rng.randint(-3, 3) for _ in range(dim)] for _ in range(n)
            ]
            assert kissing_validate(vectors).metrics["is_valid"] == oracle_verdict(vectors)
