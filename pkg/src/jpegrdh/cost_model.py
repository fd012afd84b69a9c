"""Per-block embedding costs: capacity, expected distortion and expected size change.

A block ("signal") carries one bit per AC coefficient equal to +-1. Under
histogram shifting a +-1 coefficient moves outward by one with probability 1/2
(message bit 1), every coefficient with magnitude above one always moves
outward by one, and zeros never move. The zero pattern of a block is therefore
invariant, so the zigzag run lengths never change and the entropy-coded length
of a block decomposes into independent per-coefficient terms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import CoefficientOverflow, EmptyFrequency, ZeroLength
from .jpeg_codec import (
    MAX_AC,
    ZIGZAG,
    CoefficientImage,
    HuffmanTable,
    _ac_symbol_bits,
    ac_code_length,
)
from .transform import idct_block

_AC = np.arange(1, 64)  # natural-order indices of the AC terms


@dataclass
class Signal:
    index: int
    coeffs: np.ndarray  # 64 ints, natural order
    quant_table_ref: int = 0


def signals(image: CoefficientImage) -> list[Signal]:
    comp = image.luma
    return [Signal(i, comp.blocks[i], comp.tq) for i in range(comp.blocks.shape[0])]


def _coeffs(s) -> np.ndarray:
    if isinstance(s, Signal):
        s = s.coeffs
    arr = np.asarray(s, dtype=np.int64).reshape(64)
    return arr


def capacity(s) -> int:
    c = _coeffs(s)
    return int(np.count_nonzero(np.abs(c[_AC]) == 1))


def expected_distortion(s, quant) -> float:
    """E||IDCT(diff .* Q)||^2 for one block, via the orthonormality of the DCT."""
    c = _coeffs(s)[_AC]
    q2 = np.asarray(quant, dtype=np.float64).reshape(64)[_AC] ** 2
    a = np.abs(c)
    return float(0.5 * q2[a == 1].sum() + q2[a > 1].sum())


def expected_distortion_spatial(s, quant) -> float:
    """Same expectation evaluated in the pixel domain with explicit inverse DCTs.

    Each moved coefficient contributes an independent term ``a_j * basis_j``; the
    expected squared norm is the squared norm of the mean image plus the summed
    per-pixel variances.
    """
    c = _coeffs(s)
    q = np.asarray(quant, dtype=np.float64).reshape(64)
    sign = np.sign(c).astype(np.float64)
    sign[0] = 0.0
    emb = (np.abs(c) == 1) & (np.arange(64) > 0)
    mean = np.where(emb, 0.5, 0.0) * sign * q + np.where(np.abs(c) > 1, sign, 0.0) * q
    var = np.where(emb, 0.25, 0.0) * q * q
    mean_img = idct_block(mean)
    total = float((mean_img ** 2).sum())
    for j in np.flatnonzero(var):
        unit = np.zeros(64)
        unit[j] = 1.0
        total += var[j] * float((idct_block(unit) ** 2).sum())
    return total


def _price(zz: np.ndarray, lengths: np.ndarray):
    """Per-position bit costs for the cover, the '+1 magnitude' outcome and the mask of +-1 entries."""
    mags = np.abs(zz)
    nz = mags > 0
    if (mags[nz] + 1 > MAX_AC).any():
        raise CoefficientOverflow(f"shifting would exceed magnitude {MAX_AC}")
    base = _ac_symbol_bits(zz, lengths)
    moved = _ac_symbol_bits(zz, lengths, mags=np.where(nz, mags + 1, 0))
    return base, moved, mags == 1


def expected_size_delta(s, ac_table: HuffmanTable) -> float:
    """Expected change in AC code length (bits) under fair message bits."""
    zz = _coeffs(s)[ZIGZAG[1:]][None, :]
    base, moved, emb = _price(zz, ac_table.lengths)
    delta = np.where(emb, 0.5 * (moved - base), moved - base)
    return float(delta.sum())


def size_delta_for_bits(s, bits_in, ac_table: HuffmanTable) -> int:
    """Realized change in AC code length when ``bits`` are embedded in zigzag order."""
    zz = _coeffs(s)[ZIGZAG[1:]][None, :]
    base, moved, emb = _price(zz, ac_table.lengths)
    flips = np.zeros(63, dtype=bool)
    slots = np.flatnonzero(emb[0])
    bits = np.zeros(slots.size, dtype=np.int64)
    given = np.asarray(bits_in, dtype=np.int64)[:slots.size]
    bits[:given.size] = given
    flips[slots[bits == 1]] = True
    shifted = (np.abs(zz[0]) > 1) | flips
    return int((moved[0] - base[0])[shifted].sum())


def size_delta_percent(s, s_prime, ac_table: HuffmanTable) -> float:
    before = ac_code_length(_coeffs(s), ac_table)
    if before == 0:
        raise ZeroLength("the cover block has zero coded length")
    after = ac_code_length(_coeffs(s_prime), ac_table)
    return (after - before) / before * 100.0


def frequency_cost(u: int, v: int, quant) -> float:
    """Mean squared pixel change caused by a unit change of quantized coefficient (u, v)."""
    if not (0 <= u <= 7 and 0 <= v <= 7):
        raise ValueError("frequency indices must be in 0..7")
    freq = np.zeros((8, 8))
    freq[u, v] = np.asarray(quant, dtype=np.float64).reshape(8, 8)[u, v]
    return float((idct_block(freq) ** 2).sum() / 64)


def frequency_cost_table(quant) -> np.ndarray:
    return np.array([[frequency_cost(u, v, quant) for v in range(8)] for u in range(8)])


def frequency_counts(image: CoefficientImage) -> tuple[np.ndarray, np.ndarray]:
    """Per-frequency counts of +-1 entries and of entries with magnitude > 1 (8x8 each)."""
    mags = np.abs(image.luma.blocks)
    ones = (mags == 1).sum(axis=0).reshape(8, 8)
    out = (mags > 1).sum(axis=0).reshape(8, 8)
    return ones, out


def frequency_avg_distortion(image: CoefficientImage, u: int, v: int, counts=None) -> float:
    ones, out = counts if counts is not None else frequency_counts(image)
    c_uv, c_out = int(ones[u, v]), int(out[u, v])
    if c_uv == 0:
        raise EmptyFrequency(f"no +-1 coefficients at frequency ({u}, {v})")
    return average_distortion(c_uv, c_out, frequency_cost(u, v, image.luma.quant))


def average_distortion(c_uv: int, c_out: int, cost: float) -> float:
    if c_uv == 0:
        raise EmptyFrequency("no +-1 coefficients at this frequency")
    return (0.5 * c_uv + c_out) * cost / c_uv


@dataclass
class CostTable:
    """Costs of every luminance block, in raster order."""

    r: np.ndarray  # capacity, bits
    d: np.ndarray  # expected squared spatial error
    e: np.ndarray  # expected AC code length change, bits
    zeros: np.ndarray  # number of zero AC coefficients
    ok: np.ndarray  # False where shifting would overflow or hit a missing Huffman code

    def __len__(self):
        return self.r.size

    def to_csv(self, fh) -> None:
        w = csv.writer(fh)
        w.writerow(["index", "r", "d", "e"])
        for i in range(self.r.size):
            w.writerow([i, int(self.r[i]), repr(float(self.d[i])), repr(float(self.e[i]))])


def block_costs(blocks: np.ndarray, quant, ac_table: HuffmanTable) -> CostTable:
    blocks = np.asarray(blocks, dtype=np.int64).reshape(-1, 64)
    ac = blocks[:, 1:]  # natural order without DC; fine for counts and distortion
    mags = np.abs(ac)
    q2 = np.asarray(quant, dtype=np.float64).reshape(64)[1:] ** 2
    r = (mags == 1).sum(axis=1)
    d = 0.5 * ((mags == 1) * q2).sum(axis=1) + ((mags > 1) * q2).sum(axis=1)
    zeros = (mags == 0).sum(axis=1)
    ok = ~(mags >= MAX_AC).any(axis=1)
    e = np.zeros(blocks.shape[0])
    zz = blocks[:, ZIGZAG[1:]]
    idx = np.flatnonzero(ok)
    if idx.size:
        try:
            base, moved, emb = _price(zz[idx], ac_table.lengths)
        except CoefficientOverflow:
            # some blocks need codes the table lacks; price them one at a time
            for i in idx:
                try:
                    e[i] = expected_size_delta(blocks[i], ac_table)
                except CoefficientOverflow:
                    ok[i] = False
        else:
            e[idx] = np.where(emb, 0.5 * (moved - base), moved - base).sum(axis=1)
    e[~ok] = np.nan
    return CostTable(r=r, d=d, e=e, zeros=zeros, ok=ok)


def signal_costs(image: CoefficientImage) -> CostTable:
    comp = image.luma
    return block_costs(comp.blocks, comp.quant, comp.ac_table)
