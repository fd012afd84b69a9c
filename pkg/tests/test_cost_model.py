import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jpegrdh.cost_model import (
    Signal,
    average_distortion,
    block_costs,
    capacity,
    expected_distortion,
    expected_distortion_spatial,
    expected_size_delta,
    frequency_avg_distortion,
    frequency_cost,
    frequency_cost_table,
    frequency_counts,
    signal_costs,
    signals,
    size_delta_for_bits,
    size_delta_percent,
)
from jpegrdh.embedder import hs_embed_block
from jpegrdh.errors import CoefficientOverflow, EmptyFrequency
from jpegrdh.jpeg_codec import (
    STD_LUMA_QUANT,
    ZIGZAG,
    HuffmanTable,
    ac_code_length,
    make_grayscale,
    scaled_quant_table,
)
from jpegrdh.transform import idct_block

from conftest import QUALITIES

AC = HuffmanTable.standard("ac_luma")


def zz_block(values: dict) -> np.ndarray:
    """Block from {zigzag position: value}."""
    b = np.zeros(64, dtype=np.int64)
    for pos, v in values.items():
        b[ZIGZAG[pos]] = v
    return b


def random_block(rng, density=0.3, spread=6):
    b = np.where(rng.random(64) < density, rng.integers(-spread, spread + 1, 64), 0)
    b[0] = rng.integers(-50, 50)
    return b


def brute_force_distortion(block, quant):
    """Average of ||IDCT(diff * Q)||^2 over every message assignment."""
    ac = [i for i in range(1, 64) if block[i]]
    ones = [i for i in ac if abs(block[i]) == 1]
    total = 0.0
    for bits in itertools.product((0, 1), repeat=len(ones)):
        diff = np.zeros(64)
        for i in ac:
            if abs(block[i]) > 1:
                diff[i] = np.sign(block[i])
        for i, b in zip(ones, bits):
            diff[i] = np.sign(block[i]) * b
        total += float((idct_block(diff * quant) ** 2).sum())
    return total / 2 ** len(ones)


def brute_force_size_delta(block):
    """Mean realized AC length change over all 2^r message assignments."""
    r = capacity(block)
    before = ac_code_length(block, AC)
    deltas = []
    for bits in itertools.product((0, 1), repeat=r):
        stego, _ = hs_embed_block(block, np.array(bits, dtype=np.uint8))
        deltas.append(ac_code_length(stego, AC) - before)
    return float(np.mean(deltas))


class TestCapacity:
    def test_zero(self):
        assert capacity(np.zeros(64)) == 0

    def test_mixed(self):
        assert capacity(zz_block({1: 1, 2: -1, 3: 3})) == 2

    def test_all_ones(self):
        b = np.ones(64, dtype=np.int64)
        b[0] = 1  # DC is never counted
        assert capacity(b) == 63

    def test_signal_wrapper(self, lena50):
        sig = signals(lena50)
        assert len(sig) == 4096
        assert isinstance(sig[5], Signal) and sig[5].index == 5
        assert capacity(sig[5]) == int((np.abs(lena50.luma.blocks[5, 1:]) == 1).sum())


class TestDistortion:
    def test_zero(self):
        assert expected_distortion(np.zeros(64), STD_LUMA_QUANT) == 0

    def test_one_embeddable_step_eleven(self):
        b = np.zeros(64)
        b[1] = 1  # row 0, col 1: step 11 in the QF=50 table
        assert STD_LUMA_QUANT[1] == 11
        assert expected_distortion(b, STD_LUMA_QUANT) == pytest.approx(60.5)
        assert brute_force_distortion(b, STD_LUMA_QUANT) == pytest.approx(60.5)

    def test_plus_shiftable_step_sixteen(self):
        b = np.zeros(64)
        b[1] = 1
        b[3] = 3  # row 0, col 3: step 16
        assert STD_LUMA_QUANT[3] == 16
        assert expected_distortion(b, STD_LUMA_QUANT) == pytest.approx(316.5)
        assert brute_force_distortion(b, STD_LUMA_QUANT) == pytest.approx(316.5)

    def test_parseval_1000(self, rng):
        for _ in range(1000):
            b = random_block(rng)
            q = rng.integers(1, 120, 64)
            closed = expected_distortion(b, q)
            spatial = expected_distortion_spatial(b, q)
            assert abs(closed - spatial) <= 1e-9 * max(closed, 1e-300)

    @given(st.integers(0, 2**31))
    @settings(max_examples=60, deadline=None)
    def test_matches_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        b = random_block(rng, density=0.12, spread=3)
        assert expected_distortion(b, STD_LUMA_QUANT) == pytest.approx(
            brute_force_distortion(b, STD_LUMA_QUANT), rel=1e-9)

    @given(st.integers(0, 2**31), st.integers(1, 63), st.integers(2, 50))
    @settings(max_examples=100, deadline=None)
    def test_adding_shiftable_never_lowers(self, seed, pos, mag):
        rng = np.random.default_rng(seed)
        b = random_block(rng)
        b[pos] = 0
        before = expected_distortion(b, STD_LUMA_QUANT)
        b[pos] = mag
        assert expected_distortion(b, STD_LUMA_QUANT) >= before


class TestSizeDelta:
    def test_zero(self):
        assert expected_size_delta(np.zeros(64), AC) == 0.0

    def test_single_one(self):
        assert expected_size_delta(zz_block({1: 1}), AC) == 0.5

    def test_single_two(self):
        assert expected_size_delta(zz_block({1: 2}), AC) == 0.0

    def test_overflow(self):
        with pytest.raises(CoefficientOverflow):
            expected_size_delta(zz_block({4: 1023}), AC)

    @pytest.mark.parametrize("seed", range(40))
    def test_exact_mean_over_assignments(self, seed):
        rng = np.random.default_rng(seed)
        b = random_block(rng, density=rng.uniform(0.05, 0.5), spread=rng.integers(1, 40))
        ones = np.flatnonzero(np.abs(b[1:]) == 1) + 1
        b[ones[10:]] = 0  # keep r <= 10 so all 2^r assignments can be listed
        assert expected_size_delta(b, AC) == brute_force_size_delta(b)

    @given(st.integers(0, 2**31))
    @settings(max_examples=200, deadline=None)
    def test_realized_delta_is_exact(self, seed):
        rng = np.random.default_rng(seed)
        b = random_block(rng, density=rng.uniform(0.05, 0.9), spread=int(rng.integers(1, 300)))
        bits = rng.integers(0, 2, capacity(b))
        stego, _ = hs_embed_block(b, bits)
        assert size_delta_for_bits(b, bits, AC) == ac_code_length(stego, AC) - ac_code_length(b, AC)

    def test_percent(self):
        seven, eight = zz_block({1: 1}), zz_block({1: 2})
        assert size_delta_percent(seven, seven, AC) == 0
        assert size_delta_percent(seven, eight, AC) == pytest.approx(100 / 7)
        assert size_delta_percent(eight, seven, AC) == pytest.approx(-12.5)


class TestFrequencyCost:
    @pytest.mark.parametrize("quality", QUALITIES)
    def test_quant_squared_over_64(self, quality):
        q = scaled_quant_table(quality)
        table = frequency_cost_table(q)
        assert np.allclose(table.ravel(), q.astype(float) ** 2 / 64, rtol=1e-9, atol=0)

    def test_dc_qf50(self):
        assert frequency_cost(0, 0, STD_LUMA_QUANT) == pytest.approx(4.0, abs=1e-12)

    def test_step_ten(self):
        q = np.full(64, 10)
        assert all(frequency_cost(u, v, q) == pytest.approx(1.5625) for u in range(8) for v in range(8))

    def test_doubling_quadruples(self, rng):
        q = rng.integers(1, 100, 64)
        assert np.allclose(frequency_cost_table(2 * q), 4 * frequency_cost_table(q))

    def test_bad_index(self):
        with pytest.raises(ValueError):
            frequency_cost(8, 0, STD_LUMA_QUANT)


class TestAverageDistortion:
    def test_arithmetic(self):
        assert average_distortion(4, 2, 4.0) == 4.0
        assert average_distortion(1, 0, 4.0) == 2.0
        assert average_distortion(37, 0, 3.0) == 1.5

    def test_empty(self):
        with pytest.raises(EmptyFrequency):
            average_distortion(0, 3, 1.0)

    def test_image_counts(self):
        blocks = np.zeros((4, 64), dtype=np.int64)
        blocks[:, 1] = [1, -1, 5, 0]
        blocks[0, 9] = 2
        img = make_grayscale(blocks, 16, 16)
        ones, out = frequency_counts(img)
        assert ones[0, 1] == 2 and out[0, 1] == 1 and out[1, 1] == 1
        assert frequency_avg_distortion(img, 0, 1) == pytest.approx((0.5 * 2 + 1) * 121 / 64 / 2)
        with pytest.raises(EmptyFrequency):
            frequency_avg_distortion(img, 1, 1)


class TestCostTable:
    def test_matches_scalar_paths(self, lena50):
        costs = signal_costs(lena50)
        q = lena50.luma.quant
        for i in np.random.default_rng(0).choice(lena50.block_count, 200, replace=False):
            b = lena50.luma.blocks[i]
            assert costs.r[i] == capacity(b)
            assert costs.d[i] == pytest.approx(expected_distortion(b, q), rel=1e-12)
            assert costs.e[i] == expected_size_delta(b, AC)

    def test_empty_block_costs_nothing(self):
        t = block_costs(np.zeros((3, 64)), STD_LUMA_QUANT, AC)
        assert not t.r.any() and not t.d.any() and not t.e.any()
        assert t.zeros.tolist() == [63, 63, 63]

    def test_overflow_block_flagged(self):
        blocks = np.zeros((2, 64), dtype=np.int64)
        blocks[0, 3] = 1023
        blocks[1] = zz_block({1: 1})
        t = block_costs(blocks, STD_LUMA_QUANT, AC)
        assert t.ok.tolist() == [False, True]
        assert np.isnan(t.e[0]) and t.e[1] == 0.5

    def test_csv(self, tmp_path):
        t = block_costs(np.stack([zz_block({1: 1}), np.zeros(64)]), STD_LUMA_QUANT, AC)
        with open(tmp_path / "c.csv", "w", newline="") as fh:
            t.to_csv(fh)
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "index,r,d,e"
        assert lines[1] == "0,1,60.5,0.5"
