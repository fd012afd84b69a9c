"""Baseline (SOF0, Huffman) JPEG <-> quantized DCT coefficients.

Only the entropy-coded layer is touched: every marker segment other than the
scans is kept verbatim and re-emitted in its original position, and the
file's own Huffman tables are reused when encoding. Re-serializing a parsed
file therefore gives a canonical form that is a byte-exact fixed point of
``serialize_jpeg(parse_jpeg(...))``.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CoefficientOverflow,
    CorruptStream,
    JpegError,
    MissingTable,
    UnsupportedFormat,
)

# natural-order index of the k-th coefficient in zigzag scan order
ZIGZAG = np.array([
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5,
    12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
])
_ZZ = ZIGZAG.tolist()

MAX_AC = 1023  # size category 10
MAX_DC_DIFF = 2047  # size category 11

# Annex K tables. Quantization tables are in natural (row-major) order.
STD_LUMA_QUANT = np.array([
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
])
STD_CHROMA_QUANT = np.array([
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
] + [99] * 32)

STD_DC_LUMA = ((0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0), tuple(range(12)))
STD_DC_CHROMA = ((0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0), tuple(range(12)))
STD_AC_LUMA = (
    (0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7D),
    (
        0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06,
        0x13, 0x51, 0x61, 0x07, 0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xA1, 0x08,
        0x23, 0x42, 0xB1, 0xC1, 0x15, 0x52, 0xD1, 0xF0, 0x24, 0x33, 0x62, 0x72,
        0x82, 0x09, 0x0A, 0x16, 0x17, 0x18, 0x19, 0x1A, 0x25, 0x26, 0x27, 0x28,
        0x29, 0x2A, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44, 0x45,
        0x46, 0x47, 0x48, 0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59,
        0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6A, 0x73, 0x74, 0x75,
        0x76, 0x77, 0x78, 0x79, 0x7A, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
        0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9A, 0xA2, 0xA3,
        0xA4, 0xA5, 0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6,
        0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9,
        0xCA, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA, 0xE1, 0xE2,
        0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA, 0xF1, 0xF2, 0xF3, 0xF4,
        0xF5, 0xF6, 0xF7, 0xF8, 0xF9, 0xFA,
    ),
)
STD_AC_CHROMA = (
    (0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77),
    (
        0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41,
        0x51, 0x07, 0x61, 0x71, 0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91,
        0xA1, 0xB1, 0xC1, 0x09, 0x23, 0x33, 0x52, 0xF0, 0x15, 0x62, 0x72, 0xD1,
        0x0A, 0x16, 0x24, 0x34, 0xE1, 0x25, 0xF1, 0x17, 0x18, 0x19, 0x1A, 0x26,
        0x27, 0x28, 0x29, 0x2A, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44,
        0x45, 0x46, 0x47, 0x48, 0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58,
        0x59, 0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6A, 0x73, 0x74,
        0x75, 0x76, 0x77, 0x78, 0x79, 0x7A, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
        0x88, 0x89, 0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9A,
        0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4,
        0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5, 0xC6, 0xC7,
        0xC8, 0xC9, 0xCA, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA,
        0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA, 0xF2, 0xF3, 0xF4,
        0xF5, 0xF6, 0xF7, 0xF8, 0xF9, 0xFA,
    ),
)

# size category of |v| for |v| <= 2047
_SIZE = np.zeros(2048, dtype=np.int64)
for _s in range(1, 12):
    _SIZE[1 << (_s - 1):1 << _s] = _s


def size_category(value: int) -> int:
    return abs(int(value)).bit_length()


def scaled_quant_table(quality: int, base: np.ndarray = STD_LUMA_QUANT) -> np.ndarray:
    """IJG quality scaling of an Annex K table (baseline: steps clamped to 1..255)."""
    if not 1 <= quality <= 100:
        raise ValueError(f"quality must be in 1..100, got {quality}")
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    return np.clip((base * scale + 50) // 100, 1, 255).astype(np.int64)


def estimate_quality(quant: np.ndarray) -> int:
    """Closest IJG quality factor for a luminance table (exact match if one exists)."""
    quant = np.asarray(quant).reshape(64)
    errs = [np.abs(scaled_quant_table(q) - quant).sum() for q in range(1, 101)]
    return int(np.argmin(errs)) + 1


class HuffmanTable:
    """A canonical JPEG Huffman code built from a DHT (counts, symbols) pair."""

    def __init__(self, counts, symbols, table_class: int = 1, table_id: int = 0):
        counts = tuple(int(c) for c in counts)
        symbols = tuple(int(s) for s in symbols)
        if len(counts) != 16 or sum(counts) != len(symbols) or len(symbols) > 256:
            raise CorruptStream("malformed Huffman table")
        if len(set(symbols)) != len(symbols):
            raise CorruptStream("duplicate symbol in Huffman table")
        self.counts = counts
        self.symbols = symbols
        self.table_class = table_class
        self.table_id = table_id
        self.code = [0] * 256
        self.length = [0] * 256  # 0 marks a symbol without a code
        code = 0
        k = 0
        for bits in range(1, 17):
            for _ in range(counts[bits - 1]):
                sym = symbols[k]
                self.code[sym] = code
                self.length[sym] = bits
                code += 1
                k += 1
            if code > (1 << bits):
                raise CorruptStream("over-subscribed Huffman table")
            code <<= 1
        self.lengths = np.array(self.length, dtype=np.int64)
        self._lookup = None

    @classmethod
    def standard(cls, kind: str) -> "HuffmanTable":
        """One of the four Annex K tables: 'dc_luma', 'ac_luma', 'dc_chroma', 'ac_chroma'."""
        spec, tc, th = {
            "dc_luma": (STD_DC_LUMA, 0, 0),
            "ac_luma": (STD_AC_LUMA, 1, 0),
            "dc_chroma": (STD_DC_CHROMA, 0, 1),
            "ac_chroma": (STD_AC_CHROMA, 1, 1),
        }[kind]
        return cls(spec[0], spec[1], tc, th)

    def lookup(self):
        """16-bit peek tables (symbol, code length) for decoding."""
        if self._lookup is None:
            syms = [0] * 65536
            lens = [0] * 65536
            for sym in self.symbols:
                n = self.length[sym]
                start = self.code[sym] << (16 - n)
                span = 1 << (16 - n)
                syms[start:start + span] = [sym] * span
                lens[start:start + span] = [n] * span
            self._lookup = (syms, lens)
        return self._lookup

    def payload(self) -> bytes:
        return bytes([self.table_class << 4 | self.table_id, *self.counts, *self.symbols])

    def __eq__(self, other):
        return (isinstance(other, HuffmanTable) and self.counts == other.counts
                and self.symbols == other.symbols)

    def __hash__(self):
        return hash((self.counts, self.symbols))

    def __repr__(self):
        kind = "AC" if self.table_class else "DC"
        return f"HuffmanTable({kind}{self.table_id}, {len(self.symbols)} symbols)"


@dataclass
class Component:
    id: int
    h: int
    v: int
    tq: int
    rows: int
    cols: int
    blocks: np.ndarray  # (rows * cols, 64) int32, natural order, absolute DC
    quant: np.ndarray | None = None  # steps in natural order, resolved at scan time
    dc_table: HuffmanTable | None = None
    ac_table: HuffmanTable | None = None


@dataclass
class Scan:
    header: bytes  # the SOS segment including its marker
    slots: list[int]  # indices into CoefficientImage.components
    dc_tables: list[HuffmanTable]
    ac_tables: list[HuffmanTable]
    restart_interval: int = 0


@dataclass
class CoefficientImage:
    width: int
    height: int
    components: list[Component]
    quant_tables: dict[int, np.ndarray]
    huffman_tables: dict[tuple[int, int], HuffmanTable]
    restart_interval: int = 0
    layout: list = field(default_factory=list)  # bytes segments and Scan objects, file order

    @property
    def luma(self) -> Component:
        return self.components[0]

    @property
    def preserved_segments(self) -> list[bytes]:
        return [item for item in self.layout if isinstance(item, bytes)]

    @property
    def block_count(self) -> int:
        return self.luma.blocks.shape[0]

    def copy(self) -> "CoefficientImage":
        # tables are immutable in practice; only coefficient arrays are duplicated
        comps = [copy.copy(c) for c in self.components]
        for c in comps:
            c.blocks = c.blocks.copy()
        dup = copy.copy(self)
        dup.components = comps
        return dup

    def same_coefficients(self, other: "CoefficientImage") -> bool:
        if (self.width, self.height) != (other.width, other.height):
            return False
        if len(self.components) != len(other.components):
            return False
        return all(
            a.id == b.id and a.blocks.shape == b.blocks.shape and np.array_equal(a.blocks, b.blocks)
            for a, b in zip(self.components, other.components)
        )


# -- parsing ------------------------------------------------------------------

_UNSUPPORTED_SOF = {
    0xC1: "extended sequential", 0xC2: "progressive", 0xC3: "lossless",
    0xC5: "differential sequential", 0xC6: "differential progressive",
    0xC7: "differential lossless", 0xC9: "arithmetic-coded", 0xCA: "arithmetic-coded",
    0xCB: "arithmetic-coded", 0xCD: "arithmetic-coded", 0xCE: "arithmetic-coded",
    0xCF: "arithmetic-coded", 0xCC: "arithmetic conditioning (DAC)", 0xC8: "JPG extension",
}


def parse_jpeg(data: bytes) -> CoefficientImage:
    """Decode a baseline JPEG file down to its quantized DCT coefficients."""
    try:
        return _Parser(bytes(data)).parse()
    except JpegError:
        raise
    except (IndexError, KeyError, ValueError, struct.error, OverflowError, MemoryError) as exc:
        raise CorruptStream(f"malformed JPEG: {exc!r}") from exc


class _Parser:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.quant: dict[int, np.ndarray] = {}
        self.huff: dict[tuple[int, int], HuffmanTable] = {}
        self.restart = 0
        self.frame = None
        self.width = self.height = 0
        self.components: list[Component] = []
        self.layout: list = []
        self.scanned: set[int] = set()

    def parse(self) -> CoefficientImage:
        d = self.data
        if len(d) < 4 or d[0] != 0xFF or d[1] != 0xD8:
            raise CorruptStream("missing SOI marker")
        self.pos = 2
        first_restart = None
        while True:
            marker = self._next_marker()
            if marker == 0xD9:
                break
            if marker == 0xD8 or 0xD0 <= marker <= 0xD7 or marker == 0x01:
                raise CorruptStream(f"unexpected marker FF{marker:02X}")
            if marker in _UNSUPPORTED_SOF:
                raise UnsupportedFormat(f"{_UNSUPPORTED_SOF[marker]} JPEG (FF{marker:02X}) is not supported")
            if marker == 0xDC:
                raise UnsupportedFormat("DNL marker is not supported")
            start = self.pos - 2
            seg = self._segment()
            raw = d[start:self.pos]
            if marker == 0xDA:
                if first_restart is None:
                    first_restart = self.restart
                self._scan(raw, seg)
                continue
            if marker == 0xC0:
                self._frame(seg)
            elif marker == 0xDB:
                self._dqt(seg)
            elif marker == 0xC4:
                self._dht(seg)
            elif marker == 0xDD:
                if len(seg) != 2:
                    raise CorruptStream("bad DRI length")
                self.restart = struct.unpack(">H", seg)[0]
            self.layout.append(raw)
        if self.frame is None:
            raise CorruptStream("no SOF0 frame header")
        if len(self.scanned) != len(self.components):
            raise CorruptStream("not every component is coded by a scan")
        return CoefficientImage(
            width=self.width,
            height=self.height,
            components=self.components,
            quant_tables=dict(self.quant),
            huffman_tables=dict(self.huff),
            restart_interval=first_restart or 0,
            layout=self.layout,
        )

    def _next_marker(self) -> int:
        d = self.data
        if self.pos >= len(d) or d[self.pos] != 0xFF:
            raise CorruptStream(f"expected a marker at offset {self.pos}")
        while self.pos < len(d) and d[self.pos] == 0xFF:
            self.pos += 1
        if self.pos >= len(d):
            raise CorruptStream("truncated file (no EOI)")
        marker = d[self.pos]
        self.pos += 1
        return marker

    def _segment(self) -> bytes:
        d = self.data
        if self.pos + 2 > len(d):
            raise CorruptStream("truncated segment length")
        n = struct.unpack(">H", d[self.pos:self.pos + 2])[0]
        if n < 2 or self.pos + n > len(d):
            raise CorruptStream("segment length out of range")
        seg = d[self.pos + 2:self.pos + n]
        self.pos += n
        return seg

    def _frame(self, seg: bytes):
        if self.frame is not None:
            raise CorruptStream("more than one frame header")
        if len(seg) < 6:
            raise CorruptStream("short SOF0 segment")
        precision, height, width, nf = struct.unpack(">BHHB", seg[:6])
        if precision != 8:
            raise UnsupportedFormat(f"{precision}-bit samples are not supported")
        if height == 0:
            raise UnsupportedFormat("height defined by DNL is not supported")
        if width == 0 or nf == 0 or len(seg) != 6 + 3 * nf:
            raise CorruptStream("bad SOF0 segment")
        specs = []
        for i in range(nf):
            cid, hv, tq = seg[6 + 3 * i:9 + 3 * i]
            h, v = hv >> 4, hv & 15
            if not (1 <= h <= 4 and 1 <= v <= 4) or tq > 3:
                raise CorruptStream("bad component specification")
            specs.append((cid, h, v, tq))
        if len({s[0] for s in specs}) != nf:
            raise CorruptStream("duplicate component id")
        hmax = max(s[1] for s in specs)
        vmax = max(s[2] for s in specs)
        if nf == 1:
            grids = [(-(-height // 8), -(-width // 8))]
        else:
            mcux = -(-width // (8 * hmax))
            mcuy = -(-height // (8 * vmax))
            grids = [(mcuy * v, mcux * h) for _, h, v, _ in specs]
        total = sum(r * c for r, c in grids)
        # every coded block costs at least two bits, so this bounds honest files
        if total > 4 * len(self.data) + 64:
            raise CorruptStream("frame dimensions are inconsistent with the file size")
        self.frame = (width, height)
        self.width, self.height = width, height
        self.hmax, self.vmax = hmax, vmax
        for (cid, h, v, tq), (rows, cols) in zip(specs, grids):
            self.components.append(Component(
                id=cid, h=h, v=v, tq=tq, rows=rows, cols=cols,
                blocks=np.zeros((rows * cols, 64), dtype=np.int32),
            ))

    def _dqt(self, seg: bytes):
        i = 0
        while i < len(seg):
            pq, tq = seg[i] >> 4, seg[i] & 15
            if pq > 1 or tq > 3:
                raise CorruptStream("bad DQT table spec")
            n = 64 * (pq + 1)
            body = seg[i + 1:i + 1 + n]
            if len(body) != n:
                raise CorruptStream("truncated DQT")
            vals = np.frombuffer(body, dtype=">u2" if pq else np.uint8).astype(np.int64)
            table = np.zeros(64, dtype=np.int64)
            table[ZIGZAG] = vals
            if (table == 0).any():
                raise CorruptStream("zero quantization step")
            self.quant[tq] = table
            i += 1 + n

    def _dht(self, seg: bytes):
        i = 0
        while i < len(seg):
            tc, th = seg[i] >> 4, seg[i] & 15
            if tc > 1 or th > 3:
                raise CorruptStream("bad DHT table spec")
            counts = seg[i + 1:i + 17]
            if len(counts) != 16:
                raise CorruptStream("truncated DHT")
            n = sum(counts)
            symbols = seg[i + 17:i + 17 + n]
            if len(symbols) != n:
                raise CorruptStream("truncated DHT")
            self.huff[(tc, th)] = HuffmanTable(counts, symbols, tc, th)
            i += 17 + n

    def _scan(self, raw: bytes, seg: bytes):
        if self.frame is None:
            raise CorruptStream("SOS before SOF")
        ns = seg[0]
        if not 1 <= ns <= 4 or len(seg) != 4 + 2 * ns:
            raise CorruptStream("bad SOS segment")
        ss, se, a = seg[1 + 2 * ns:4 + 2 * ns]
        if (ss, se, a) != (0, 63, 0):
            raise UnsupportedFormat("spectral selection / successive approximation is not baseline")
        ids = {c.id: n for n, c in enumerate(self.components)}
        slots, dcs, acs = [], [], []
        for i in range(ns):
            cs, t = seg[1 + 2 * i], seg[2 + 2 * i]
            if cs not in ids:
                raise CorruptStream(f"scan references unknown component {cs}")
            slot = ids[cs]
            if slot in self.scanned or slot in slots:
                raise CorruptStream("component coded twice")
            td, ta = t >> 4, t & 15
            if (0, td) not in self.huff or (1, ta) not in self.huff:
                raise MissingTable(f"Huffman table missing for component {cs}")
            comp = self.components[slot]
            if comp.tq not in self.quant:
                raise MissingTable(f"quantization table {comp.tq} missing")
            comp.quant = self.quant[comp.tq].copy()
            comp.dc_table = self.huff[(0, td)]
            comp.ac_table = self.huff[(1, ta)]
            slots.append(slot)
            dcs.append(comp.dc_table)
            acs.append(comp.ac_table)
        if ns > 1 and sum(self.components[s].h * self.components[s].v for s in slots) > 10:
            raise CorruptStream("too many blocks per MCU")
        scan = Scan(raw, slots, dcs, acs, self.restart)
        chunks, self.pos = _split_entropy(self.data, self.pos)
        _decode_scan(self, scan, chunks)
        self.scanned.update(slots)
        self.layout.append(scan)


def _split_entropy(d: bytes, p: int):
    """Cut the entropy-coded data at RST markers and remove byte stuffing.

    Returns the unstuffed chunks and the offset of the marker ending the scan.
    """
    chunks = []
    start = p
    i = p
    n = len(d)
    expect_rst = 0
    while True:
        j = d.find(b"\xff", i)
        if j < 0 or j + 1 >= n:
            raise CorruptStream("entropy-coded segment is not terminated")
        b = d[j + 1]
        if b == 0x00:
            i = j + 2
            continue
        k = j + 1
        while k < n and d[k] == 0xFF:  # fill bytes before a marker
            k += 1
        if k >= n:
            raise CorruptStream("entropy-coded segment is not terminated")
        b = d[k]
        if b == 0x00:
            raise CorruptStream("fill byte before stuffed zero")
        chunks.append(d[start:j].replace(b"\xff\x00", b"\xff"))
        if 0xD0 <= b <= 0xD7:
            if b - 0xD0 != expect_rst:
                raise CorruptStream("restart markers out of sequence")
            expect_rst = (expect_rst + 1) & 7
            start = i = k + 1
            continue
        return chunks, k - 1


def _scan_units(image_like, scan: Scan):
    """Coding order of a scan: one list of (slot, block index) per MCU."""
    comps = image_like.components
    if len(scan.slots) == 1:
        slot = scan.slots[0]
        comp = comps[slot]
        if len(comps) == 1:
            rows, cols = comp.rows, comp.cols
        else:
            width, height = image_like.width, image_like.height
            hmax = max(c.h for c in comps)
            vmax = max(c.v for c in comps)
            cw = -(-width * comp.h // hmax)
            ch = -(-height * comp.v // vmax)
            rows, cols = -(-ch // 8), -(-cw // 8)
        return [[(0, r * comp.cols + c)] for r in range(rows) for c in range(cols)]
    first = comps[scan.slots[0]]
    mcuy, mcux = first.rows // first.v, first.cols // first.h
    pattern = []
    for n, slot in enumerate(scan.slots):
        c = comps[slot]
        for v in range(c.v):
            for h in range(c.h):
                pattern.append((n, c, v, h))
    units = []
    for my in range(mcuy):
        for mx in range(mcux):
            units.append([(n, (my * c.v + v) * c.cols + mx * c.h + h) for n, c, v, h in pattern])
    return units


def _decode_scan(parser: _Parser, scan: Scan, chunks: list[bytes]):
    units = _scan_units(parser, scan)
    ri = scan.restart_interval
    groups = [units] if not ri else [units[i:i + ri] for i in range(0, len(units), ri)]
    if len(chunks) != len(groups):
        raise CorruptStream(f"expected {len(groups)} restart intervals, found {len(chunks)}")
    flats = [parser.components[s].blocks.reshape(-1).tolist() for s in scan.slots]
    dc = [t.lookup() for t in scan.dc_tables]
    ac = [t.lookup() for t in scan.ac_tables]
    for chunk, group in zip(chunks, groups):
        _decode_chunk(chunk, group, dc, ac, flats)
    for s, flat in zip(scan.slots, flats):
        comp = parser.components[s]
        comp.blocks = np.array(flat, dtype=np.int32).reshape(-1, 64)


def _decode_chunk(chunk: bytes, units, dc, ac, flats):
    zz = _ZZ
    n = len(chunk)
    acc = 0
    nbits = 0
    pos = 0
    pad = 0
    preds = [0] * len(flats)
    for mcu in units:
        for slot, index in mcu:
            out = flats[slot]
            base = index * 64
            dsyms, dlens = dc[slot]
            asyms, alens = ac[slot]
            # DC
            while nbits < 32:
                if pos < n:
                    acc = ((acc & ((1 << nbits) - 1)) << 8) | chunk[pos]
                    pos += 1
                else:
                    acc = ((acc & ((1 << nbits) - 1)) << 8) | 0xFF
                    pad += 8
                nbits += 8
            look = (acc >> (nbits - 16)) & 0xFFFF
            ln = dlens[look]
            if not ln:
                raise CorruptStream("invalid DC Huffman code")
            s = dsyms[look]
            nbits -= ln
            if s:
                if s > 11:
                    raise CorruptStream("DC magnitude category out of range")
                val = (acc >> (nbits - s)) & ((1 << s) - 1)
                nbits -= s
                if val < (1 << (s - 1)):
                    val -= (1 << s) - 1
                preds[slot] += val
            out[base] = preds[slot]
            # AC
            k = 1
            while k < 64:
                while nbits < 32:
                    if pos < n:
                        acc = ((acc & ((1 << nbits) - 1)) << 8) | chunk[pos]
                        pos += 1
                    else:
                        acc = ((acc & ((1 << nbits) - 1)) << 8) | 0xFF
                        pad += 8
                    nbits += 8
                look = (acc >> (nbits - 16)) & 0xFFFF
                ln = alens[look]
                if not ln:
                    raise CorruptStream("invalid AC Huffman code")
                rs = asyms[look]
                nbits -= ln
                s = rs & 15
                r = rs >> 4
                if s == 0:
                    if r == 15:
                        k += 16
                        if k > 64:
                            raise CorruptStream("zero run past end of block")
                        continue
                    if r:
                        raise CorruptStream("invalid AC run/size symbol")
                    break
                if s > 10:
                    raise CorruptStream("AC magnitude category out of range")
                k += r
                if k > 63:
                    raise CorruptStream("AC coefficient index out of range")
                val = (acc >> (nbits - s)) & ((1 << s) - 1)
                nbits -= s
                if val < (1 << (s - 1)):
                    val -= (1 << s) - 1
                out[base + zz[k]] = val
                k += 1
            if pad and pad > nbits:
                raise CorruptStream("truncated entropy-coded data")


# -- serialization --------------------------------------------------------------

def serialize_jpeg(img: CoefficientImage) -> bytes:
    """Encode a coefficient image with its own tables and preserved segments."""
    return _serialize(img)[0]


def measure_scan_bits(img: CoefficientImage) -> int:
    """Number of Huffman-coded bits over all scans (no padding, stuffing or markers)."""
    return _serialize(img)[1]


def _serialize(img: CoefficientImage):
    out = bytearray(b"\xff\xd8")
    total_bits = 0
    for item in img.layout:
        if isinstance(item, Scan):
            data, bits = _encode_scan(img, item)
            out += item.header
            out += data
            total_bits += bits
        else:
            out += item
    out += b"\xff\xd9"
    return bytes(out), total_bits


def _encode_scan(img: CoefficientImage, scan: Scan):
    units = _scan_units(img, scan)
    ri = scan.restart_interval
    zz_blocks = [img.components[s].blocks[:, ZIGZAG].tolist() for s in scan.slots]
    dcs = [(t.code, t.length) for t in scan.dc_tables]
    acs = [(t.code, t.length) for t in scan.ac_tables]
    out = bytearray()
    acc = 0
    nbits = 0
    total = 0
    preds = [0] * len(scan.slots)

    def put(code, length):
        nonlocal acc, nbits, total
        acc = (acc << length) | code
        nbits += length
        total += length
        while nbits >= 8:
            nbits -= 8
            b = (acc >> nbits) & 0xFF
            out.append(b)
            if b == 0xFF:
                out.append(0)
        acc &= (1 << nbits) - 1

    for u, mcu in enumerate(units):
        if ri and u and u % ri == 0:
            if nbits:
                b = ((acc << (8 - nbits)) | ((1 << (8 - nbits)) - 1)) & 0xFF
                out.append(b)
                if b == 0xFF:
                    out.append(0)
            acc = 0
            nbits = 0
            out += bytes([0xFF, 0xD0 + ((u // ri - 1) & 7)])
            preds = [0] * len(scan.slots)
        for slot, index in mcu:
            blk = zz_blocks[slot][index]
            dcode, dlen = dcs[slot]
            acode, alen = acs[slot]
            diff = blk[0] - preds[slot]
            preds[slot] = blk[0]
            s = abs(diff).bit_length()
            if s > 11:
                raise CoefficientOverflow(f"DC difference {diff} exceeds the baseline range")
            if not dlen[s]:
                raise CoefficientOverflow(f"DC table has no code for category {s}")
            put(dcode[s], dlen[s])
            if s:
                put(diff if diff > 0 else diff + (1 << s) - 1, s)
            run = 0
            last = 63
            while last > 0 and blk[last] == 0:
                last -= 1
            for k in range(1, last + 1):
                v = blk[k]
                if v == 0:
                    run += 1
                    continue
                while run > 15:
                    if not alen[0xF0]:
                        raise CoefficientOverflow("AC table has no ZRL code")
                    put(acode[0xF0], alen[0xF0])
                    run -= 16
                s = abs(v).bit_length()
                if s > 10:
                    raise CoefficientOverflow(f"AC coefficient {v} exceeds magnitude {MAX_AC}")
                sym = run << 4 | s
                if not alen[sym]:
                    raise CoefficientOverflow(f"AC table has no code for run/size {run}/{s}")
                put(acode[sym], alen[sym])
                put(v if v > 0 else v + (1 << s) - 1, s)
                run = 0
            if last < 63:
                if not alen[0]:
                    raise CoefficientOverflow("AC table has no EOB code")
                put(acode[0], alen[0])
    if nbits:
        pad = 8 - nbits
        b = ((acc << pad) | ((1 << pad) - 1)) & 0xFF
        out.append(b)
        if b == 0xFF:
            out.append(0)
    return bytes(out), total


# -- code length accounting ------------------------------------------------------

def ac_code_length(block, ac_table: HuffmanTable) -> int:
    """Exact number of entropy-coded bits taken by the 63 AC coefficients of a block.

    ``block`` is 64 coefficients in natural order; the DC term is ignored.
    """
    blk = np.asarray(block).reshape(64)[ZIGZAG].tolist()
    lengths = ac_table.length
    last = 63
    while last > 0 and blk[last] == 0:
        last -= 1
    bits = 0
    run = 0
    for k in range(1, last + 1):
        v = blk[k]
        if v == 0:
            run += 1
            continue
        while run > 15:
            if not lengths[0xF0]:
                raise CoefficientOverflow("AC table has no ZRL code")
            bits += lengths[0xF0]
            run -= 16
        s = abs(v).bit_length()
        if s > 10:
            raise CoefficientOverflow(f"AC coefficient {v} exceeds magnitude {MAX_AC}")
        n = lengths[run << 4 | s]
        if not n:
            raise CoefficientOverflow(f"AC table has no code for run/size {run}/{s}")
        bits += n + s
        run = 0
    if last < 63:
        if not lengths[0]:
            raise CoefficientOverflow("AC table has no EOB code")
        bits += lengths[0]
    return bits


def ac_code_lengths(blocks: np.ndarray, ac_table: HuffmanTable) -> np.ndarray:
    """Vectorized :func:`ac_code_length` over an (n, 64) natural-order block array."""
    zz = np.asarray(blocks)[:, ZIGZAG[1:]].astype(np.int64)
    per_coef = _ac_symbol_bits(zz, ac_table.lengths)
    eob = np.where(zz[:, -1] == 0, ac_table.lengths[0], 0)
    if (zz[:, -1] == 0).any() and not ac_table.lengths[0]:
        raise CoefficientOverflow("AC table has no EOB code")
    return per_coef.sum(axis=1) + eob


def ac_runs(zz: np.ndarray) -> np.ndarray:
    """Zero-run length preceding each AC position of zigzag-ordered rows (n, 63)."""
    pos = np.arange(1, 64)
    marker = np.where(zz != 0, pos, 0)
    seen = np.maximum.accumulate(marker, axis=1)
    prev = np.concatenate([np.zeros((zz.shape[0], 1), dtype=seen.dtype), seen[:, :-1]], axis=1)
    return pos - prev - 1


def _ac_symbol_bits(zz: np.ndarray, lengths: np.ndarray, mags: np.ndarray | None = None) -> np.ndarray:
    """Bits spent on each nonzero AC entry (code + value bits + preceding ZRLs).

    ``mags`` optionally overrides the magnitudes coded at nonzero positions, which
    is how the cost model prices hypothetical edits that keep the zero pattern.
    """
    nz = zz != 0
    mags = np.abs(zz) if mags is None else mags
    if (mags[nz] > MAX_AC).any():
        raise CoefficientOverflow(f"AC magnitude exceeds {MAX_AC}")
    runs = ac_runs(zz)
    size = _SIZE[np.minimum(mags, MAX_AC)]
    sym = (runs % 16) << 4 | size
    code = lengths[sym]
    zrl = (runs // 16) * lengths[0xF0]
    if (nz & (code == 0)).any() or ((nz & (runs >= 16)).any() and not lengths[0xF0]):
        raise CoefficientOverflow("AC table lacks a code required by this block")
    return np.where(nz, code + size + zrl, 0)


# -- construction helpers ----------------------------------------------------------

def _segment(marker: int, payload: bytes) -> bytes:
    return bytes([0xFF, marker]) + struct.pack(">H", len(payload) + 2) + payload


def make_grayscale(blocks, width: int, height: int, quant=None, restart_interval: int = 0) -> CoefficientImage:
    """Build a single-component baseline image from natural-order coefficient blocks.

    Uses the Annex K luminance Huffman tables; ``quant`` defaults to the standard
    QF=50 luminance table.
    """
    quant = STD_LUMA_QUANT if quant is None else np.asarray(quant).reshape(64)
    blocks = np.asarray(blocks, dtype=np.int32).reshape(-1, 64)
    rows, cols = -(-height // 8), -(-width // 8)
    if blocks.shape[0] != rows * cols:
        raise ValueError(f"expected {rows * cols} blocks for {width}x{height}, got {blocks.shape[0]}")
    if not (1 <= quant.min() and quant.max() <= 255):
        raise ValueError("quantization steps must be in 1..255")
    dc = HuffmanTable.standard("dc_luma")
    ac = HuffmanTable.standard("ac_luma")
    q = np.asarray(quant, dtype=np.int64)
    layout = [
        _segment(0xDB, bytes([0]) + bytes(q[ZIGZAG].tolist())),
        _segment(0xC0, struct.pack(">BHHB", 8, height, width, 1) + bytes([1, 0x11, 0])),
        _segment(0xC4, dc.payload() + ac.payload()),
    ]
    if restart_interval:
        layout.append(_segment(0xDD, struct.pack(">H", restart_interval)))
    comp = Component(id=1, h=1, v=1, tq=0, rows=rows, cols=cols, blocks=blocks.copy(),
                     quant=q.copy(), dc_table=dc, ac_table=ac)
    layout.append(Scan(_segment(0xDA, bytes([1, 1, 0x00, 0, 63, 0])), [0], [dc], [ac], restart_interval))
    return CoefficientImage(width, height, [comp], {0: q.copy()}, {(0, 0): dc, (1, 0): ac},
                            restart_interval, layout)
