"""Reversible embedding and extraction.

Payload bits ride on +-1 AC coefficients of the selected luminance blocks
(histogram shifting). The decision vector travels in the least significant bits
of |v| >= 2 AC coefficients of a block region at the end of the image, read back
to front, so the extractor needs no side information. The LSBs it displaces are
carried at the head of the hidden message and written back on extraction.
An out-of-band mode skips that channel and hands V to the extractor directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import selector
from .cost_model import CostTable, Signal, signal_costs
from .errors import (
    AuxDecodeError,
    Infeasible,
    InsufficientAuxCapacity,
    InsufficientCapacity,
    OverflowRisk,
    ShortStream,
    TruncatedStego,
)
from .jpeg_codec import MAX_AC, ZIGZAG, CoefficientImage, measure_scan_bits
from .transform import decompress, psnr

HEADER_BITS = 65
RUN_MAX = 0xFFFF
STRATEGIES = ("multiobj", "huang", "hou")
_AC_ZZ = ZIGZAG[1:]


def _as_array(s) -> np.ndarray:
    return np.asarray(s.coeffs if isinstance(s, Signal) else s, dtype=np.int64).reshape(64)


def _rewrap(s, coeffs: np.ndarray):
    if isinstance(s, Signal):
        return Signal(s.index, coeffs, s.quant_table_ref)
    return coeffs


def to_bits(data: bytes) -> np.ndarray:
    """Bytes to a 0/1 array, most significant bit first."""
    return np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))


def from_bits(bits) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


# -- per-block histogram shifting ----------------------------------------------------

def hs_embed_block(s, bits):
    """Embed exactly ``capacity(s)`` bits into one block; returns (block, consumed)."""
    c = _as_array(s).copy()
    zz = c[_AC_ZZ]
    mags = np.abs(zz)
    if (mags >= MAX_AC).any():
        raise OverflowRisk(f"block holds an AC magnitude of {int(mags.max())}")
    emb = mags == 1
    need = int(emb.sum())
    bits = np.asarray(bits, dtype=np.int64).reshape(-1)
    if bits.size < need:
        raise ShortStream(f"block needs {need} bits, stream has {bits.size}")
    step = (mags > 1).astype(np.int64)
    step[emb] = bits[:need] != 0
    c[_AC_ZZ] = zz + np.sign(zz) * step
    return _rewrap(s, c), need


def hs_extract_block(s_prime):
    """Inverse of :func:`hs_embed_block`; returns (bits, restored block)."""
    c = _as_array(s_prime).copy()
    zz = c[_AC_ZZ]
    mags = np.abs(zz)
    carriers = (mags == 1) | (mags == 2)
    bits = (mags[carriers] == 2).astype(np.uint8)
    c[_AC_ZZ] = zz - np.sign(zz) * (mags >= 2)
    return bits, _rewrap(s_prime, c)


# -- auxiliary record ----------------------------------------------------------------

def _uint_bits(value: int, width: int) -> np.ndarray:
    return ((value >> np.arange(width - 1, -1, -1)) & 1).astype(np.uint8)


def _bits_uint(bits) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


def _runs(v: np.ndarray) -> list[int]:
    """Alternating run lengths starting with the 0-run, long runs split by empty runs."""
    change = np.flatnonzero(np.diff(v.astype(np.int8))) + 1
    edges = np.concatenate([[0], change, [v.size]])
    runs = np.diff(edges).tolist()
    if v.size and v[0]:
        runs.insert(0, 0)
    out = []
    for run in runs:
        while run > RUN_MAX:
            out.extend([RUN_MAX, 0])
            run -= RUN_MAX
        out.append(run)
    return out


@dataclass
class AuxRecord:
    payload_bits: int
    signal_count: int
    encoding_flag: int
    v_encoding: np.ndarray

    def __len__(self):
        return HEADER_BITS + self.v_encoding.size

    def to_bits(self) -> np.ndarray:
        head = np.concatenate([
            _uint_bits(self.payload_bits, 32), _uint_bits(self.signal_count, 32),
            np.array([self.encoding_flag], dtype=np.uint8),
        ])
        return np.concatenate([head, self.v_encoding.astype(np.uint8)])

    def decision_vector(self) -> np.ndarray:
        if self.encoding_flag == 0:
            if self.v_encoding.size != self.signal_count:
                raise AuxDecodeError("raw decision vector has the wrong length")
            return self.v_encoding.astype(bool)
        runs = [_bits_uint(self.v_encoding[i:i + 16]) for i in range(0, self.v_encoding.size, 16)]
        v = np.repeat(np.arange(len(runs)) % 2, runs).astype(bool)
        if v.size != self.signal_count:
            raise AuxDecodeError("run lengths do not add up to the signal count")
        return v


def build_aux(V, payload_bits: int) -> AuxRecord:
    v = np.asarray(V.bits if isinstance(V, selector.DecisionVector) else V, dtype=bool).reshape(-1)
    if v.size == 0:
        raise ValueError("decision vector is empty")
    if not (0 <= payload_bits < 1 << 32) or v.size >= 1 << 32:
        raise ValueError("payload length and signal count must fit in 32 bits")
    rle = np.concatenate([_uint_bits(r, 16) for r in _runs(v)])
    if rle.size < v.size:
        return AuxRecord(payload_bits, v.size, 1, rle)
    return AuxRecord(payload_bits, v.size, 0, v.astype(np.uint8))


def decode_aux(stream) -> AuxRecord:
    """Read one record off the front of ``stream`` (extra trailing bits are ignored)."""
    stream = np.asarray(stream, dtype=np.uint8).reshape(-1)
    if stream.size < HEADER_BITS:
        raise TruncatedStego("stream ends inside the aux header")
    n = _bits_uint(stream[:32])
    k = _bits_uint(stream[32:64])
    flag = int(stream[64])
    body = stream[HEADER_BITS:]
    if flag == 0:
        if body.size < k:
            raise TruncatedStego("stream ends inside the decision vector")
        return AuxRecord(n, k, 0, body[:k].copy())
    pos = total = 0
    while total < k:
        if pos + 16 > body.size:
            raise TruncatedStego("stream ends inside the run-length code")
        total += _bits_uint(body[pos:pos + 16])
        pos += 16
    if total != k:
        raise AuxDecodeError("run lengths overrun the signal count")
    return AuxRecord(n, k, 1, body[:pos].copy())


# -- the carrier region for the aux record ------------------------------------------

@dataclass
class TailSlots:
    blocks: np.ndarray  # block index of each slot, in stream order
    positions: np.ndarray  # natural-order coefficient index of each slot
    reserved: np.ndarray  # bool per block

    def __len__(self):
        return self.blocks.size

    def read(self, coeffs: np.ndarray, count: int | None = None) -> np.ndarray:
        sl = slice(None) if count is None else slice(0, count)
        return (np.abs(coeffs[self.blocks[sl], self.positions[sl]]) & 1).astype(np.uint8)

    def write(self, coeffs: np.ndarray, bits) -> np.ndarray:
        """LSB substitution in place; returns the displaced original LSBs."""
        bits = np.asarray(bits, dtype=np.int64)
        b, p = self.blocks[:bits.size], self.positions[:bits.size]
        v = coeffs[b, p].astype(np.int64)
        old = (np.abs(v) & 1).astype(np.uint8)
        coeffs[b, p] = np.sign(v) * ((np.abs(v) & ~1) | bits)
        return old


def reserve_tail(blocks: np.ndarray, need: int) -> TailSlots:
    """Walk blocks from the last one backwards until ``need`` LSB slots are collected.

    Raises InsufficientAuxCapacity when the whole image has fewer slots.
    """
    n = blocks.shape[0]
    zz = np.abs(blocks[:, _AC_ZZ])
    per_block = (zz >= 2).sum(axis=1)[::-1]
    cum = np.cumsum(per_block)
    if need > 0 and (cum.size == 0 or cum[-1] < need):
        have = int(cum[-1]) if cum.size else 0
        raise InsufficientAuxCapacity(f"aux record needs {need} slots, image offers {have}")
    count = int(np.searchsorted(cum, need)) + 1 if need > 0 else 0
    order = np.arange(n - 1, n - 1 - count, -1)
    reserved = np.zeros(n, dtype=bool)
    reserved[order] = True
    sel = zz[order] >= 2
    rows, cols = np.nonzero(sel)  # row-major: block order then zigzag order
    return TailSlots(order[rows], _AC_ZZ[cols], reserved)


# -- planning and embedding ----------------------------------------------------------

@dataclass
class EmbedReport:
    strategy: str
    alpha: float
    payload_bits: int
    capacity_bits: int
    aux_bits: int
    selected_count: int
    e_star_bits: float
    predicted_d: float
    predicted_e: float
    psnr_db: float
    scan_bits_cover: int
    scan_bits_stego: int
    hou_k: int | None = None
    extras: dict = field(default_factory=dict)

    @property
    def increase_bits(self) -> int:
        return self.scan_bits_stego - self.scan_bits_cover

    @property
    def increase_percent(self) -> float:
        return 100.0 * self.increase_bits / self.scan_bits_cover if self.scan_bits_cover else math.nan


@dataclass
class EmbedPlan:
    V: selector.DecisionVector
    aux: AuxRecord
    tail: TailSlots | None  # None when V is handed to the extractor out of band
    e_star: float = 0.0
    hou_k: int | None = None

    @property
    def reserved_tail(self) -> np.ndarray:
        if self.tail is None:
            return np.zeros(0, dtype=np.int64)
        return np.flatnonzero(self.tail.reserved)

    @property
    def overhead(self) -> int:
        return 0 if self.tail is None else len(self.aux)


def _setup(image: CoefficientImage, costs: CostTable | None, in_band: bool):
    costs = signal_costs(image) if costs is None else costs
    if not in_band:
        return costs, None, costs.ok.copy()
    tail = reserve_tail(image.luma.blocks, HEADER_BITS + image.block_count)
    return costs, tail, costs.ok & ~tail.reserved


def _full_vector(costs: CostTable, eligible: np.ndarray) -> np.ndarray:
    return eligible & (costs.r > 0)


def max_payload(image: CoefficientImage, costs: CostTable | None = None, in_band: bool = True) -> int:
    """Largest payload (bits) any strategy can carry in this cover."""
    costs, tail, eligible = _setup(image, costs, in_band)
    full = _full_vector(costs, eligible)
    overhead = len(build_aux(full, 0)) if in_band else 0
    return max(int(costs.r[full].sum()) - overhead, 0)


def _choose(strategy, image, costs, eligible, C, alpha, hou_descending):
    """Returns (DecisionVector, hou K or None)."""
    if strategy == "huang":
        return selector.huang_order(costs, C, eligible), None
    if strategy == "hou":
        return selector.hou_select(image, costs, C, eligible, descending=hou_descending)
    problem = selector.problem_from_costs(costs, C, alpha, eligible)
    warm = []
    try:
        warm.append(selector.huang_order(costs, C, eligible))
    except Infeasible:
        pass
    return selector.select_signals(problem, warm_starts=warm), None


def plan(image: CoefficientImage, payload_bits: int, strategy: str = "multiobj", alpha: float = 1.0,
         hou_descending: bool = True, costs: CostTable | None = None, in_band: bool = True) -> EmbedPlan:
    """Pick the carrying blocks.

    In band, the blocks must also hold the LSBs displaced by the aux record. That
    overhead depends on how well V compresses, so the target capacity is raised
    until the chosen V's own record fits; selecting every usable block is the
    last resort.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    costs, tail, eligible = _setup(image, costs, in_band)
    total = int(costs.r[eligible].sum())
    problem_for = lambda C: selector.problem_from_costs(costs, C, alpha, eligible)  # noqa: E731
    if not in_band:
        if payload_bits > total:
            raise InsufficientCapacity(f"payload of {payload_bits} bits exceeds capacity {total}")
        V, hou_k = _choose(strategy, image, costs, eligible, payload_bits, alpha, hou_descending)
        return EmbedPlan(V, build_aux(V, payload_bits), None,
                         selector.min_expansion(problem_for(payload_bits)), hou_k)
    overhead = HEADER_BITS
    for _ in range(12):
        C = payload_bits + overhead
        if C > total:
            break
        V, hou_k = _choose(strategy, image, costs, eligible, C, alpha, hou_descending)
        aux = build_aux(V, payload_bits)
        if V.capacity >= payload_bits + len(aux):
            return EmbedPlan(V, aux, tail, selector.min_expansion(problem_for(C)), hou_k)
        overhead = max(overhead + 1, len(aux))
    full = _full_vector(costs, eligible)
    aux = build_aux(full, payload_bits)
    need = payload_bits + len(aux)
    if int(costs.r[full].sum()) < need:
        raise InsufficientCapacity(
            f"payload of {payload_bits} bits exceeds capacity {max_payload(image, costs)}")
    V = selector.DecisionVector.from_bits(problem_for(need), full)
    return EmbedPlan(V, aux, tail, selector.min_expansion(problem_for(need)))


def apply_plan(image: CoefficientImage, plan_: EmbedPlan, payload) -> CoefficientImage:
    payload = np.asarray(payload, dtype=np.uint8).reshape(-1)
    if payload.size != plan_.aux.payload_bits:
        raise ValueError("payload length differs from the planned length")
    stego = image.copy()
    blocks = stego.luma.blocks
    originals = np.zeros(0, dtype=np.uint8)
    if plan_.tail is not None:
        originals = plan_.tail.write(blocks, plan_.aux.to_bits())
    message = np.zeros(max(plan_.V.capacity, originals.size + payload.size), dtype=np.uint8)
    message[:originals.size] = originals
    message[originals.size:originals.size + payload.size] = payload
    pos = 0
    for i in np.flatnonzero(plan_.V.bits):
        blocks[i], used = hs_embed_block(blocks[i], message[pos:])
        pos += used
    return stego


def plan_and_embed(image: CoefficientImage, payload, strategy: str = "multiobj", alpha: float = 1.0,
                   hou_descending: bool = True, measure: bool = True, in_band: bool = True):
    """Embed ``payload`` (0/1 array) and return ``(stego, EmbedReport)``.

    With ``in_band=False`` the decision vector is not written into the image;
    ``report.extras["aux"]`` then holds the record the extractor must be given.
    """
    payload = np.asarray(payload, dtype=np.uint8).reshape(-1)
    costs = signal_costs(image)
    p = plan(image, payload.size, strategy, alpha, hou_descending, costs, in_band)
    stego = apply_plan(image, p, payload)
    report = EmbedReport(
        strategy=strategy, alpha=alpha, payload_bits=int(payload.size),
        capacity_bits=max_payload(image, costs, in_band), aux_bits=p.overhead,
        selected_count=p.V.count, e_star_bits=p.e_star,
        predicted_d=p.V.objective_d, predicted_e=p.V.objective_e,
        psnr_db=math.nan, scan_bits_cover=0, scan_bits_stego=0, hou_k=p.hou_k,
    )
    if not in_band:
        report.extras["aux"] = p.aux
    if measure:
        report.psnr_db = psnr(decompress(image), decompress(stego))
        report.scan_bits_cover = measure_scan_bits(image)
        report.scan_bits_stego = measure_scan_bits(stego)
    return stego, report


# -- extraction ----------------------------------------------------------------------------

def extract(stego: CoefficientImage, aux: AuxRecord | None = None):
    """Recover ``(payload bits, cover image)`` from a stego image.

    ``aux`` is only needed for images embedded out of band.
    """
    k = stego.block_count
    restored = stego.copy()
    blocks = restored.luma.blocks
    tail = None
    if aux is None:
        try:
            tail = reserve_tail(blocks, HEADER_BITS + k)
        except InsufficientAuxCapacity as exc:
            raise TruncatedStego(str(exc)) from None
        aux = decode_aux(tail.read(blocks))
    if aux.signal_count != k:
        raise AuxDecodeError(f"aux record claims {aux.signal_count} signals, image has {k}")
    v = aux.decision_vector()
    if tail is not None and (v & tail.reserved).any():
        raise AuxDecodeError("decision vector selects blocks of the aux region")
    overhead = 0 if tail is None else len(aux)
    selected = np.flatnonzero(v)
    zz = np.abs(blocks[selected][:, _AC_ZZ])
    room = int(((zz == 1) | (zz == 2)).sum())
    need = overhead + aux.payload_bits
    if room < need:
        raise AuxDecodeError(f"selected blocks carry {room} bits, record needs {need}")
    chunks = [np.zeros(0, dtype=np.uint8)]
    for i in selected:
        bits, blocks[i] = hs_extract_block(blocks[i])
        chunks.append(bits)
    stream = np.concatenate(chunks)
    if tail is not None:
        tail.write(blocks, stream[:overhead])
    return stream[overhead:need].copy(), restored
