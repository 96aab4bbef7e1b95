"""STID wire protocol and the request-handling core shared by in-process and TCP paths.

Frame: ``b"STID"``, u8 version, u8 msg_type, u32 payload_length, payload
(little-endian throughout). Payloads:

* QUERY_PUBLIC  0x01: u32 L_p, packed code, u8 rule, u32 param
* RESP_PUBLIC   0x02: u32 count, count x (u32 index, f32 nu)
* QUERY_PRIVATE 0x03: u8 auth_k, u32 N, N x f64 y, u32 count, count x u32 index
* RESP_PRIVATE  0x04: u8 levels, per level u32 count, count x (u32 index, f64 distance)
* ERROR         0x7F: u8 code, utf-8 message

For rule 0 (top-gamma) ``param`` is gamma; for rule 1 (threshold) the low
16 bits are ``sim_min`` and the high 16 bits ``dis_max``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import AuthorizationError, InvalidArgument, ProtocolError
from .pipeline import (
    THRESHOLD,
    TOP_GAMMA,
    PrivateQuery,
    RefinementThresholds,
    SearchRule,
    client_query,
    final_decision,
    private_refine,
    public_search,
)
from .search import CandidateList, InvertedIndex

MAGIC = b"STID"
VERSION = 1
HEADER = struct.Struct("<4sBBI")
MAX_PAYLOAD = 64 * 1024 * 1024

QUERY_PUBLIC = 0x01
RESP_PUBLIC = 0x02
QUERY_PRIVATE = 0x03
RESP_PRIVATE = 0x04
ERROR = 0x7F

E_MALFORMED = 1
E_VERSION = 2
E_TOO_LARGE = 3
E_UNAUTHORIZED = 4
E_BAD_REQUEST = 5
E_UNKNOWN_TYPE = 6
E_INTERNAL = 7

_RULES = {TOP_GAMMA: 0, THRESHOLD: 1}
_PUB_ITEM = np.dtype([("index", "<u4"), ("nu", "<f4")])
_PRIV_ITEM = np.dtype([("index", "<u4"), ("distance", "<f8")])


def frame(msg_type: int, payload: bytes) -> bytes:
    return HEADER.pack(MAGIC, VERSION, msg_type, len(payload)) + payload


def parse_header(header: bytes):
    """Validate a 10-byte header and return ``(msg_type, payload_length)``."""
    if len(header) != HEADER.size:
        raise ProtocolError(E_MALFORMED, "short header")
    magic, version, msg_type, length = HEADER.unpack(header)
    if magic != MAGIC:
        raise ProtocolError(E_MALFORMED, f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(E_VERSION, f"unsupported protocol version {version}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(E_TOO_LARGE, f"declared payload of {length} bytes exceeds limit")
    return msg_type, length


def split_frame(buf: bytes):
    msg_type, length = parse_header(buf[: HEADER.size])
    payload = buf[HEADER.size:]
    if len(payload) != length:
        raise ProtocolError(E_MALFORMED, "payload length does not match header")
    return msg_type, payload


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if n < 0 or self.pos + n > len(self.buf):
            raise ProtocolError(E_MALFORMED, "truncated payload")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def array(self, dtype, count):
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype)

    def done(self):
        if self.pos != len(self.buf):
            raise ProtocolError(E_MALFORMED, "trailing bytes in payload")


def encode_public_query(b_p, rule: SearchRule) -> bytes:
    b_p = np.asarray(b_p, dtype=np.int8)
    if rule.kind == TOP_GAMMA:
        param = rule.gamma
    else:
        if not (0 <= rule.sim_min < 1 << 16 and 0 <= rule.dis_max < 1 << 16):
            raise InvalidArgument("threshold parameters must fit in 16 bits")
        param = rule.sim_min | (rule.dis_max << 16)
    packed = kernels.pack_ternary(b_p[None, :]).tobytes()
    return struct.pack("<I", b_p.size) + packed + struct.pack("<BI", _RULES[rule.kind], param)


def decode_public_query(payload: bytes):
    r = _Reader(payload)
    (L_p,) = r.unpack("<I")
    width = (L_p + 3) // 4
    packed = np.frombuffer(r.take(width), dtype=np.uint8).reshape(1, width)
    rule_code, param = r.unpack("<BI")
    r.done()
    try:
        b_p = kernels.unpack_ternary(packed, L_p)[0]
    except ValueError as exc:
        raise ProtocolError(E_MALFORMED, str(exc)) from exc
    if rule_code == 0:
        if param < 1:
            raise ProtocolError(E_BAD_REQUEST, "gamma must be >= 1")
        rule = SearchRule(TOP_GAMMA, gamma=param)
    elif rule_code == 1:
        rule = SearchRule(THRESHOLD, sim_min=param & 0xFFFF, dis_max=param >> 16)
    else:
        raise ProtocolError(E_BAD_REQUEST, f"unknown rule {rule_code}")
    return b_p, rule


def encode_public_response(cl: CandidateList) -> bytes:
    items = np.empty(len(cl), dtype=_PUB_ITEM)
    items["index"] = cl.indices
    items["nu"] = cl.scores
    return struct.pack("<I", len(cl)) + items.tobytes()


def decode_public_response(payload: bytes) -> CandidateList:
    r = _Reader(payload)
    (count,) = r.unpack("<I")
    items = r.array(_PUB_ITEM, count)
    r.done()
    return CandidateList(items["index"].astype(np.int64), items["nu"].astype(np.float32), "public", "wire")


def encode_private_query(auth_k: int, y, indices) -> bytes:
    y = np.asarray(y, dtype="<f8")
    idx = np.asarray(indices, dtype="<u4")
    return (
        struct.pack("<BI", auth_k, y.size) + y.tobytes()
        + struct.pack("<I", idx.size) + idx.tobytes()
    )


def decode_private_query(payload: bytes) -> PrivateQuery:
    r = _Reader(payload)
    auth_k, N = r.unpack("<BI")
    y = r.array("<f8", N).astype(np.float64)
    (count,) = r.unpack("<I")
    idx = r.array("<u4", count).astype(np.int64)
    r.done()
    if not np.all(np.isfinite(y)):
        raise ProtocolError(E_BAD_REQUEST, "query has non-finite entries")
    return PrivateQuery(y, auth_k, idx)


def encode_private_response(lists) -> bytes:
    out = [struct.pack("<B", len(lists))]
    for cl in lists:
        items = np.empty(len(cl), dtype=_PRIV_ITEM)
        items["index"] = cl.indices
        items["distance"] = cl.scores
        out += [struct.pack("<I", len(cl)), items.tobytes()]
    return b"".join(out)


def decode_private_response(payload: bytes) -> list:
    r = _Reader(payload)
    (levels,) = r.unpack("<B")
    lists = []
    for level in range(1, levels + 1):
        (count,) = r.unpack("<I")
        items = r.array(_PRIV_ITEM, count)
        lists.append(CandidateList(items["index"].astype(np.int64), items["distance"].copy(), f"private-{level}", "wire"))
    r.done()
    return lists


def encode_error(code: int, message: str) -> bytes:
    return struct.pack("<B", code) + message.encode("utf-8")


def decode_error(payload: bytes) -> ProtocolError:
    if not payload:
        return ProtocolError(E_MALFORMED, "empty error frame")
    return ProtocolError(payload[0], payload[1:].decode("utf-8", errors="replace"))


def error_frame(exc: ProtocolError) -> bytes:
    return frame(ERROR, encode_error(exc.code, str(exc)))


class Service:
    """Base request handler: maps one request payload to one response frame."""

    accepts: int = -1

    def process(self, msg_type: int, payload: bytes):
        """Return ``(response_frame, close)``; ``close`` is set after any error."""
        try:
            if msg_type != self.accepts:
                raise ProtocolError(E_UNKNOWN_TYPE, f"unexpected message type {msg_type:#x}")
            return self.respond(payload), False
        except ProtocolError as exc:
            return error_frame(exc), True
        except AuthorizationError as exc:
            return error_frame(ProtocolError(E_UNAUTHORIZED, str(exc))), True
        except (InvalidArgument, IndexError) as exc:
            return error_frame(ProtocolError(E_BAD_REQUEST, str(exc))), True
        except Exception as exc:  # keep the server alive on anything unexpected
            return error_frame(ProtocolError(E_INTERNAL, f"{type(exc).__name__}: {exc}")), True

    def respond(self, payload: bytes) -> bytes:
        raise NotImplementedError

    def serve_frame(self, request: bytes):
        """Handle one complete request frame held in memory."""
        try:
            msg_type, payload = split_frame(request)
        except ProtocolError as exc:
            return error_frame(exc), True
        return self.process(msg_type, payload)


class PublicService(Service):
    accepts = QUERY_PUBLIC

    def __init__(self, bundle):
        self.bundle = bundle
        self.index = InvertedIndex(bundle.codes)

    def respond(self, payload):
        b_p, rule = decode_public_query(payload)
        if b_p.size != self.bundle.L_p:
            raise ProtocolError(E_BAD_REQUEST, f"code length {b_p.size} != L_p {self.bundle.L_p}")
        return frame(RESP_PUBLIC, encode_public_response(public_search(self.index, b_p, rule)))


class PrivateService(Service):
    accepts = QUERY_PRIVATE

    def __init__(self, codebooks, thresholds=RefinementThresholds(), allowed_levels=None):
        self.codebooks = codebooks
        self.thresholds = thresholds
        self.allowed = set(range(1, codebooks.K + 1) if allowed_levels is None else allowed_levels)

    def respond(self, payload):
        q = decode_private_query(payload)
        if q.auth not in self.allowed:
            raise AuthorizationError(f"authorization level {q.auth} not allowed")
        lists = private_refine(self.codebooks, q, self.thresholds)
        return frame(RESP_PRIVATE, encode_private_response(lists))


class InProcessTransport:
    """Sends frames straight to a service object; same bytes as the TCP path."""

    def __init__(self, service: Service):
        self.service = service

    def request(self, data: bytes) -> bytes:
        return self.service.serve_frame(data)[0]

    def close(self):
        pass


@dataclass(frozen=True, eq=False)
class ClientConfig:
    transform: object
    sparsity: int
    noise: int
    selection: np.ndarray
    rule: SearchRule = SearchRule()
    auth: int = 1

    @classmethod
    def from_bundle(cls, bundle, sparsity, noise=0, rule=SearchRule(), auth=1):
        return cls(bundle.transform, sparsity, noise, bundle.selection, rule, auth)


@dataclass(eq=False)
class IdentifyResult:
    public_list: CandidateList
    private_lists: list
    public_response: bytes
    private_response: bytes

    @property
    def decision(self):
        return final_decision(self.private_lists)


def _expect(resp: bytes, msg_type: int) -> bytes:
    got, payload = split_frame(resp)
    if got == ERROR:
        raise decode_error(payload)
    if got != msg_type:
        raise ProtocolError(E_MALFORMED, f"expected message {msg_type:#x}, got {got:#x}")
    return payload


def public_request(public, b_p, rule: SearchRule):
    resp = public.request(frame(QUERY_PUBLIC, encode_public_query(b_p, rule)))
    return decode_public_response(_expect(resp, RESP_PUBLIC)), resp


def private_request(private, auth: int, y, indices):
    resp = private.request(frame(QUERY_PRIVATE, encode_private_query(auth, y, indices)))
    return decode_private_response(_expect(resp, RESP_PRIVATE)), resp


def identify(y, client: ClientConfig, public, private, rng) -> IdentifyResult:
    """Client flow over any transport: public search, then private refinement of its list."""
    b_p, y = client_query(y, client.transform, client.sparsity, client.noise, client.selection, rng)
    public_list, resp_pub = public_request(public, b_p, client.rule)
    lists, resp_priv = private_request(private, client.auth, y, public_list.indices)
    return IdentifyResult(public_list, lists, resp_pub, resp_priv)
