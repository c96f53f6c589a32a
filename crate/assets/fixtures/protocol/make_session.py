"""Writes session.bin (framed CBOR envelopes) and session.json (their
typed decoding). The encoder here is written against the byte format and
shares nothing with the Rust codec."""

import json
import struct
from pathlib import Path

HERE = Path(__file__).parent


class Int(int):
    pass


def head(major, arg):
    m = major << 5
    if arg < 24:
        return bytes([m | arg])
    if arg < 1 << 8:
        return bytes([m | 24, arg])
    if arg < 1 << 16:
        return bytes([m | 25]) + struct.pack(">H", arg)
    if arg < 1 << 32:
        return bytes([m | 26]) + struct.pack(">I", arg)
    return bytes([m | 27]) + struct.pack(">Q", arg)


def enc(v):
    if v is None:
        return b"\xf6"
    if v is True:
        return b"\xf5"
    if v is False:
        return b"\xf4"
    if isinstance(v, int):
        return head(0, v) if v >= 0 else head(1, -1 - v)
    if isinstance(v, float):
        return b"\xfb" + struct.pack(">d", v)
    if isinstance(v, str):
        b = v.encode()
        return head(3, len(b)) + b
    if isinstance(v, bytes):
        return head(2, len(v)) + v
    if isinstance(v, list):
        return head(4, len(v)) + b"".join(enc(x) for x in v)
    if isinstance(v, dict):
        items = sorted((enc(k), enc(x)) for k, x in v.items())
        return head(5, len(items)) + b"".join(k + x for k, x in items)
    raise TypeError(v)


def typed(v):
    if v is None:
        return {"null": None}
    if isinstance(v, bool):
        return {"bool": v}
    if isinstance(v, int):
        return {"int": str(v)}
    if isinstance(v, float):
        return {"float": struct.pack(">d", v).hex()}
    if isinstance(v, str):
        return {"text": v}
    if isinstance(v, bytes):
        return {"bytes": v.hex()}
    if isinstance(v, list):
        return {"array": [typed(x) for x in v]}
    return {"map": {k: typed(x) for k, x in v.items()}}


def envelope(topic, seq, stamp, payload):
    return {"topic": topic, "seq": seq, "stamp": float(stamp), "payload": payload}


envs = [
    envelope("episode_start", 0, 0.0, {
        "episode": 0,
        "control_rate": 10.0,
        "robot": "sim-0",
        "limits": [2**64 - 1, -(2**64), -1, 23, 24, 255, 256, 65535, 65536, 2**32],
        "notes": "x" * 300,
        "extra": {"nested": [None, True, False, b"\x00\x01\xff", {"": 1.5}]},
    }),
]
for k in range(1, 4):
    envs.append(envelope("observation", 2 * k - 1, 0.1 * k, {
        "d": 0.01 * k - 0.015,
        "phi": -0.02 * k,
        "v_est": 0.2,
        "signed_zero": -0.0,
        "tiny": 5e-324,
        "huge": 1.7976931348623157e308,
    }))
    envs.append(envelope("command", 2 * k, 0.1 * k + 0.01, {
        "in_reply_to": 2 * k - 1,
        "u_l": 0.5 - 0.01 * k,
        "u_r": 0.5 + 0.01 * k,
    }))
envs.append(envelope("episode_end", 7, 0.4, {"reason": "time_limit", "ünïcode": "日本"}))

frames = b""
for e in envs:
    body = enc(e)
    frames += struct.pack(">I", len(body)) + body
(HERE / "session.bin").write_bytes(frames)
(HERE / "session.json").write_text(json.dumps([
    {"topic": e["topic"], "seq": e["seq"], "stamp": typed(e["stamp"])["float"],
     "payload": {k: typed(v) for k, v in e["payload"].items()}}
    for e in envs
], indent=1, ensure_ascii=False) + "\n")
