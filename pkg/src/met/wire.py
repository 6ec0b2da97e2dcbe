"""Dispatcher-to-invoker framing and JSON codecs.

A frame is a 4-byte big-endian body length followed by a UTF-8 JSON body.
"""

from __future__ import annotations

import asyncio
import base64
import json
import struct
from typing import List

from .core import Event, FiringRecord

HEADER = struct.Struct(">I")
HEADER_SIZE = HEADER.size
MAX_FRAME_SIZE = 16 * 1024 * 1024


class FrameError(ValueError):
    pass


def encode_frame(obj) -> bytes:
    body = json.dumps(obj, separators=(",", ":")).encode("utf-8")
    if len(body) > MAX_FRAME_SIZE:
        raise FrameError(f"frame of {len(body)} bytes exceeds {MAX_FRAME_SIZE}")
    return HEADER.pack(len(body)) + body


class FrameDecoder:
    """Incremental decoder for a byte stream of frames."""

    def __init__(self, max_size: int = MAX_FRAME_SIZE):
        self._buf = bytearray()
        self.max_size = max_size

    def feed(self, data: bytes) -> List[dict]:
        self._buf += data
        frames = []
        buf = self._buf
        offset = 0
        while len(buf) - offset >= HEADER_SIZE:
            (size,) = HEADER.unpack_from(buf, offset)
            if size > self.max_size:
                raise FrameError(f"frame of {size} bytes exceeds {self.max_size}")
            end = offset + HEADER_SIZE + size
            if len(buf) < end:
                break
            frames.append(json.loads(bytes(buf[offset + HEADER_SIZE:end])))
            offset = end
        if offset:
            del buf[:offset]
        return frames

    @property
    def buffered(self) -> int:
        return len(self._buf)


async def read_frame(reader: asyncio.StreamReader, max_size: int = MAX_FRAME_SIZE) -> dict:
    (size,) = HEADER.unpack(await reader.readexactly(HEADER_SIZE))
    if size > max_size:
        raise FrameError(f"frame of {size} bytes exceeds {max_size}")
    return json.loads(await reader.readexactly(size))


async def write_frame(writer: asyncio.StreamWriter, obj) -> None:
    writer.write(encode_frame(obj))
    await writer.drain()


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def event_frame(trigger_id: str, event: Event) -> dict:
    return {
        "triggerId": trigger_id,
        "id": event.id,
        "type": event.event_type,
        "createdAt": event.created_at,
        "payload": b64(event.payload),
    }


def event_from_frame(frame: dict) -> Event:
    return Event(
        id=frame["id"],
        event_type=frame["type"],
        payload=base64.b64decode(frame.get("payload") or ""),
        created_at=int(frame.get("createdAt", 0)),
    )


def invocation_payload(record: FiringRecord) -> dict:
    """JSON body posted to the target function for one firing."""
    return {
        "triggerId": record.trigger_id,
        "caseIndex": record.case_index,
        "events": {
            t: [{"id": e.id, "createdAt": e.created_at, "payload": b64(e.payload)} for e in evs]
            for t, evs in record.consumed.items()
        },
        "firedAt": record.fired_at,
        "fulfillingEventId": record.fulfilling_event_id,
    }


def firing_from_payload(body: dict) -> FiringRecord:
    consumed = {
        t: [
            Event(e["id"], t, base64.b64decode(e.get("payload") or ""), int(e.get("createdAt", 0)))
            for e in evs
        ]
        for t, evs in body["events"].items()
    }
    return FiringRecord(
        trigger_id=body["triggerId"],
        case_index=int(body["caseIndex"]),
        consumed=consumed,
        fired_at=int(body.get("firedAt", 0)),
        fulfilling_event_id=body.get("fulfillingEventId", ""),
    )
