"""Decoding of BGP UPDATE traffic from MRT archives and the pipe-separated text format.

MRT layout follows RFC 6396 (BGP4MP / BGP4MP_ET), UPDATE payloads follow
RFC 4271 with the RFC 4760 multiprotocol NLRI attributes.
"""
from __future__ import annotations

import bz2
import gzip
import heapq
import ipaddress
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

log = logging.getLogger(__name__)

Prefix = ipaddress.IPv4Network | ipaddress.IPv6Network

MRT_HEADER = struct.Struct("!IHHI")
BGP4MP = 16
BGP4MP_ET = 17
BGP4MP_MESSAGE = 1
BGP4MP_MESSAGE_AS4 = 4
# STATE_CHANGE, STATE_CHANGE_AS4, MESSAGE_LOCAL, MESSAGE_AS4_LOCAL
BGP4MP_OTHER_SUBTYPES = {0, 5, 6, 7}
TABLE_DUMP_TYPES = {12, 13}

BGP_MARKER = b"\xff" * 16
BGP_UPDATE = 2

ATTR_ORIGIN = 1
ATTR_AS_PATH = 2
ATTR_MP_REACH = 14
ATTR_MP_UNREACH = 15

AS_SET = 1
AS_SEQUENCE = 2
AS_CONFED_SEQUENCE = 3
AS_CONFED_SET = 4

AFI_IPV4 = 1
AFI_IPV6 = 2


class Origin(str, Enum):
    IGP = "IGP"
    EGP = "EGP"
    INCOMPLETE = "INCOMPLETE"
    ABSENT = "ABSENT"


_ORIGIN_CODES = {0: Origin.IGP, 1: Origin.EGP, 2: Origin.INCOMPLETE}


class MrtParseError(ValueError):
    """Unrecoverable framing error; ``offset`` is the byte position of the bad record."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class TextFormatError(ValueError):
    def __init__(self, message: str, lineno: int):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class StreamOrderError(ValueError):
    pass


class _Malformed(Exception):
    pass


@dataclass(frozen=True)
class UpdateRecord:
    timestamp: int
    peer_as: int
    peer_ip: str = ""
    announced: tuple[Prefix, ...] = ()
    withdrawn: tuple[Prefix, ...] = ()
    as_path: tuple[int, ...] = ()
    origin: Origin = Origin.ABSENT
    as_set: bool = False

    def __post_init__(self):
        if set(self.announced) & set(self.withdrawn):
            raise ValueError("a prefix cannot be both announced and withdrawn in one record")
        if self.announced and not self.as_path:
            raise ValueError("announcement without AS path")
        if not 0 <= self.peer_as < 2**32:
            raise ValueError(f"peer AS out of range: {self.peer_as}")

    @property
    def is_withdrawal(self) -> bool:
        return not self.announced


@dataclass
class IngestConfig:
    paths: list[Path] = field(default_factory=list)
    peer_as: frozenset[int] | None = None
    start: int = 0
    end: int = 2**32
    family: int | None = None  # 4, 6 or None for both

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError(f"empty time range [{self.start}, {self.end})")
        if self.family not in (None, 4, 6):
            raise ValueError(f"unknown address family {self.family!r}")
        if self.peer_as is not None:
            self.peer_as = frozenset(self.peer_as)

    def accepts_peer(self, peer_as: int) -> bool:
        return self.peer_as is None or peer_as in self.peer_as

    def accepts_time(self, ts: int) -> bool:
        return self.start <= ts < self.end


@dataclass
class IngestCounters:
    emitted: int = 0
    skipped: int = 0
    dropped: int = 0
    unknown_type: int = 0
    non_update: int = 0
    filtered: int = 0

    @property
    def total(self) -> int:
        return self.emitted + self.skipped + self.dropped


# --- MRT decoding -----------------------------------------------------------


def read_archive(path: str | Path) -> bytes:
    """Read a possibly gzip/bzip2 compressed file into memory."""
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    if raw[:3] == b"BZh":
        return bz2.decompress(raw)
    return raw


def _decode_prefixes(buf: bytes, afi: int) -> list[Prefix]:
    width = 4 if afi == AFI_IPV4 else 16
    out = []
    pos = 0
    while pos < len(buf):
        plen = buf[pos]
        pos += 1
        if plen > width * 8:
            raise _Malformed(f"prefix length {plen} too long")
        nbytes = (plen + 7) // 8
        if pos + nbytes > len(buf):
            raise _Malformed("truncated prefix")
        addr = buf[pos:pos + nbytes] + b"\x00" * (width - nbytes)
        pos += nbytes
        cls = ipaddress.IPv4Network if afi == AFI_IPV4 else ipaddress.IPv6Network
        out.append(cls((addr, plen), strict=False))
    return out


def _decode_as_path(buf: bytes, as_size: int) -> tuple[list[int], bool]:
    path: list[int] = []
    has_set = False
    pos = 0
    fmt = "!H" if as_size == 2 else "!I"
    while pos < len(buf):
        if pos + 2 > len(buf):
            raise _Malformed("truncated AS_PATH segment header")
        seg_type, count = buf[pos], buf[pos + 1]
        pos += 2
        if seg_type not in (AS_SET, AS_SEQUENCE, AS_CONFED_SEQUENCE, AS_CONFED_SET):
            raise _Malformed(f"bad AS_PATH segment type {seg_type}")
        end = pos + count * as_size
        if end > len(buf):
            raise _Malformed("truncated AS_PATH segment")
        for i in range(count):
            path.append(struct.unpack_from(fmt, buf, pos + i * as_size)[0])
        if seg_type in (AS_SET, AS_CONFED_SET):
            has_set = True
        pos = end
    return path, has_set


def _decode_mp_reach(buf: bytes) -> tuple[int, list[Prefix]]:
    if len(buf) < 5:
        raise _Malformed("truncated MP_REACH_NLRI")
    afi, safi, nh_len = struct.unpack_from("!HBB", buf, 0)
    pos = 4 + nh_len
    if pos >= len(buf):
        raise _Malformed("truncated MP_REACH_NLRI next hop")
    pos += 1  # reserved octet
    if afi not in (AFI_IPV4, AFI_IPV6) or safi not in (1, 2):
        return afi, []
    return afi, _decode_prefixes(buf[pos:], afi)


def _decode_mp_unreach(buf: bytes) -> tuple[int, list[Prefix]]:
    if len(buf) < 3:
        raise _Malformed("truncated MP_UNREACH_NLRI")
    afi, safi = struct.unpack_from("!HB", buf, 0)
    if afi not in (AFI_IPV4, AFI_IPV6) or safi not in (1, 2):
        return afi, []
    return afi, _decode_prefixes(buf[3:], afi)


def decode_update(body: bytes, as_size: int):
    """Decode an UPDATE message body (after the 19-byte BGP header).

    Returns ``(announced, withdrawn, as_path, origin, as_set)``.
    """
    if len(body) < 4:
        raise _Malformed("UPDATE too short")
    wlen = struct.unpack_from("!H", body, 0)[0]
    if 2 + wlen + 2 > len(body):
        raise _Malformed("withdrawn routes length overruns message")
    withdrawn = _decode_prefixes(body[2:2 + wlen], AFI_IPV4)
    pos = 2 + wlen
    alen = struct.unpack_from("!H", body, pos)[0]
    pos += 2
    if pos + alen > len(body):
        raise _Malformed("path attribute length overruns message")
    attrs = body[pos:pos + alen]
    announced = _decode_prefixes(body[pos + alen:], AFI_IPV4)

    origin = Origin.ABSENT
    as_path: list[int] = []
    as_set = False
    apos = 0
    while apos < len(attrs):
        if apos + 3 > len(attrs):
            raise _Malformed("truncated attribute header")
        flags, atype = attrs[apos], attrs[apos + 1]
        if flags & 0x10:
            if apos + 4 > len(attrs):
                raise _Malformed("truncated extended attribute header")
            length = struct.unpack_from("!H", attrs, apos + 2)[0]
            apos += 4
        else:
            length = attrs[apos + 2]
            apos += 3
        if apos + length > len(attrs):
            raise _Malformed(f"attribute {atype} overruns attribute block")
        value = attrs[apos:apos + length]
        apos += length
        if atype == ATTR_ORIGIN:
            if length != 1 or value[0] not in _ORIGIN_CODES:
                raise _Malformed("bad ORIGIN")
            origin = _ORIGIN_CODES[value[0]]
        elif atype == ATTR_AS_PATH:
            as_path, as_set = _decode_as_path(value, as_size)
        elif atype == ATTR_MP_REACH:
            announced.extend(_decode_mp_reach(value)[1])
        elif atype == ATTR_MP_UNREACH:
            withdrawn.extend(_decode_mp_unreach(value)[1])

    # withdrawals are applied before NLRI, so a prefix present in both ends up announced
    ann = list(dict.fromkeys(announced))
    ann_set = set(ann)
    wd = [p for p in dict.fromkeys(withdrawn) if p not in ann_set]
    if ann and not as_path:
        raise _Malformed("announcement without AS_PATH")
    return ann, wd, as_path, origin, as_set


def _decode_bgp4mp(ts: int, subtype: int, body: bytes, cfg: IngestConfig):
    as_size = 4 if subtype == BGP4MP_MESSAGE_AS4 else 2
    hdr = 2 * as_size  # peer AS + local AS
    if len(body) < hdr + 4:
        raise _Malformed("truncated BGP4MP header")
    if as_size == 4:
        peer_as, _local_as = struct.unpack_from("!II", body, 0)
    else:
        peer_as, _local_as = struct.unpack_from("!HH", body, 0)
    _ifindex, afi = struct.unpack_from("!HH", body, hdr)
    pos = hdr + 4
    if afi == AFI_IPV4:
        alen = 4
    elif afi == AFI_IPV6:
        alen = 16
    else:
        raise _Malformed(f"unknown peer AFI {afi}")
    if len(body) < pos + 2 * alen + 19:
        raise _Malformed("truncated BGP4MP addresses or BGP header")
    peer_ip = str(ipaddress.ip_address(body[pos:pos + alen]))
    pos += 2 * alen
    msg = body[pos:]
    if msg[:16] != BGP_MARKER:
        raise _Malformed("bad BGP marker")
    mlen, mtype = struct.unpack_from("!HB", msg, 16)
    if mlen < 19 or mlen > len(msg):
        raise _Malformed("bad BGP message length")
    if mtype != BGP_UPDATE:
        return "non_update"
    if not cfg.accepts_peer(peer_as) or not cfg.accepts_time(ts):
        return "filtered"
    ann, wd, path, origin, as_set = decode_update(msg[19:mlen], as_size)
    if cfg.family is not None:
        ann = [p for p in ann if p.version == cfg.family]
        wd = [p for p in wd if p.version == cfg.family]
    if not ann and not wd:
        return "filtered"
    return UpdateRecord(
        timestamp=ts,
        peer_as=peer_as,
        peer_ip=peer_ip,
        announced=tuple(ann),
        withdrawn=tuple(wd),
        as_path=tuple(path) if ann else (),
        origin=origin if ann else Origin.ABSENT,
        as_set=as_set if ann else False,
    )


def iter_mrt(data: bytes, cfg: IngestConfig | None = None,
             counters: IngestCounters | None = None) -> Iterator[UpdateRecord]:
    """Yield UpdateRecords from a concatenation of MRT records, in file order.

    Framing errors (a header or body running past the end of the buffer) raise
    MrtParseError. Anything wrong inside a well-framed record only increments
    ``counters.dropped``.
    """
    cfg = cfg or IngestConfig()
    counters = counters if counters is not None else IngestCounters()
    offset = 0
    n = len(data)
    while offset < n:
        if offset + MRT_HEADER.size > n:
            raise MrtParseError("truncated MRT header", offset)
        ts, mtype, subtype, length = MRT_HEADER.unpack_from(data, offset)
        start = offset + MRT_HEADER.size
        end = start + length
        if end > n:
            raise MrtParseError(f"MRT record body of {length} bytes truncated", offset)
        body = data[start:end]
        record_offset = offset
        offset = end

        if mtype not in (BGP4MP, BGP4MP_ET):
            counters.skipped += 1
            if mtype not in TABLE_DUMP_TYPES:
                counters.unknown_type += 1
                log.debug("unknown MRT type %d at offset %d", mtype, record_offset)
            continue
        if mtype == BGP4MP_ET:
            if len(body) < 4:
                counters.dropped += 1
                continue
            body = body[4:]  # microsecond timestamp
        if subtype not in (BGP4MP_MESSAGE, BGP4MP_MESSAGE_AS4):
            counters.skipped += 1
            if subtype not in BGP4MP_OTHER_SUBTYPES:
                counters.unknown_type += 1
            else:
                counters.non_update += 1
            continue
        try:
            result = _decode_bgp4mp(ts, subtype, body, cfg)
        except (_Malformed, ValueError, struct.error) as exc:
            counters.dropped += 1
            log.debug("dropping malformed record at offset %d: %s", record_offset, exc)
            continue
        if result == "non_update":
            counters.skipped += 1
            counters.non_update += 1
        elif result == "filtered":
            counters.skipped += 1
            counters.filtered += 1
        else:
            counters.emitted += 1
            yield result


def parse_mrt_stream(data: bytes, cfg: IngestConfig | None = None
                     ) -> tuple[list[UpdateRecord], IngestCounters]:
    counters = IngestCounters()
    records = list(iter_mrt(data, cfg, counters))
    return records, counters


# --- text format -------------------------------------------------------------
#
# ts|peer_as|A/W|prefixes|as_path|origin[|peer_ip]
# prefixes are space separated; AS_SET members are written inside braces.


def _format_path(path: Sequence[int], as_set: bool) -> str:
    text = " ".join(str(a) for a in path)
    return f"{{{text}}}" if as_set and path else text


def _parse_path(text: str, lineno: int) -> tuple[tuple[int, ...], bool]:
    as_set = "{" in text
    tokens = text.replace("{", " ").replace("}", " ").replace(",", " ").split()
    try:
        path = tuple(int(t) for t in tokens)
    except ValueError:
        raise TextFormatError(f"bad AS path {text!r}", lineno) from None
    if any(not 0 <= a < 2**32 for a in path):
        raise TextFormatError(f"AS number out of range in {text!r}", lineno)
    return path, as_set


def format_text_record(rec: UpdateRecord) -> list[str]:
    """Render a record as text lines; records carrying both directions need two lines."""
    lines = []
    tail = f"|{rec.peer_ip}" if rec.peer_ip else ""
    if rec.withdrawn:
        prefixes = " ".join(str(p) for p in rec.withdrawn)
        lines.append(f"{rec.timestamp}|{rec.peer_as}|W|{prefixes}||{tail}")
    if rec.announced:
        prefixes = " ".join(str(p) for p in rec.announced)
        path = _format_path(rec.as_path, rec.as_set)
        lines.append(f"{rec.timestamp}|{rec.peer_as}|A|{prefixes}|{path}|{rec.origin.value}{tail}")
    return lines


def write_text_log(records: Iterable[UpdateRecord]) -> str:
    return "".join(line + "\n" for rec in records for line in format_text_record(rec))


def parse_text_log(text: str) -> list[UpdateRecord]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("|")
        if len(fields) not in (6, 7):
            raise TextFormatError(f"expected 6 or 7 '|'-separated fields, got {len(fields)}", lineno)
        ts_s, peer_s, kind, prefixes_s, path_s, origin_s = fields[:6]
        peer_ip = fields[6].strip() if len(fields) == 7 else ""
        try:
            ts = int(ts_s)
            peer = int(peer_s)
        except ValueError:
            raise TextFormatError("timestamp and peer AS must be integers", lineno) from None
        try:
            prefixes = tuple(ipaddress.ip_network(p, strict=False) for p in prefixes_s.split())
        except ValueError as exc:
            raise TextFormatError(f"bad prefix: {exc}", lineno) from None
        if not prefixes:
            raise TextFormatError("no prefix", lineno)
        kind = kind.strip().upper()
        try:
            if kind == "A":
                path, as_set = _parse_path(path_s, lineno)
                if not path:
                    raise TextFormatError("announcement with empty AS path", lineno)
                origin_s = origin_s.strip().upper() or "ABSENT"
                if origin_s not in Origin.__members__:
                    raise TextFormatError(f"unknown origin {origin_s!r}", lineno)
                rec = UpdateRecord(ts, peer, peer_ip, announced=prefixes, as_path=path,
                                   origin=Origin[origin_s], as_set=as_set)
            elif kind == "W":
                rec = UpdateRecord(ts, peer, peer_ip, withdrawn=prefixes)
            else:
                raise TextFormatError(f"record kind must be A or W, got {kind!r}", lineno)
        except TextFormatError:
            raise
        except ValueError as exc:
            raise TextFormatError(str(exc), lineno) from None
        out.append(rec)
    return out


def filter_records(records: Iterable[UpdateRecord], cfg: IngestConfig) -> Iterator[UpdateRecord]:
    """Apply the peer/time/family filter of ``cfg`` to already-decoded records."""
    for rec in records:
        if not cfg.accepts_peer(rec.peer_as) or not cfg.accepts_time(rec.timestamp):
            continue
        if cfg.family is not None:
            ann = tuple(p for p in rec.announced if p.version == cfg.family)
            wd = tuple(p for p in rec.withdrawn if p.version == cfg.family)
            if not ann and not wd:
                continue
            if ann != rec.announced or wd != rec.withdrawn:
                rec = UpdateRecord(rec.timestamp, rec.peer_as, rec.peer_ip, ann, wd,
                                   rec.as_path if ann else (),
                                   rec.origin if ann else Origin.ABSENT,
                                   rec.as_set if ann else False)
        yield rec


# --- merging -----------------------------------------------------------------


def _checked(stream: Iterable[UpdateRecord], index: int) -> Iterator[tuple]:
    prev = None
    for pos, rec in enumerate(stream):
        if prev is not None and rec.timestamp < prev:
            raise StreamOrderError(
                f"stream {index} not sorted: record {pos} has timestamp {rec.timestamp} < {prev}")
        prev = rec.timestamp
        yield (rec.timestamp, rec.peer_as, index, pos), rec


def merge_streams(streams: Sequence[Iterable[UpdateRecord]]) -> list[UpdateRecord]:
    """Merge timestamp-sorted streams; ties go to the lower peer AS, then lower input index."""
    merged = heapq.merge(*(_checked(s, i) for i, s in enumerate(streams)), key=lambda kv: kv[0])
    return [rec for _, rec in merged]


def load_records(path: str | Path, cfg: IngestConfig | None = None
                 ) -> tuple[list[UpdateRecord], IngestCounters]:
    """Load one file, dispatching on content: MRT (optionally compressed) or text."""
    cfg = cfg or IngestConfig()
    data = read_archive(path)
    head = data[:64]
    looks_text = bool(head) and all(32 <= b < 127 or b in (9, 10, 13) for b in head)
    if looks_text:
        records = list(filter_records(parse_text_log(data.decode("utf-8")), cfg))
        return records, IngestCounters(emitted=len(records))
    return parse_mrt_stream(data, cfg)
