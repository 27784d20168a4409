#!/usr/bin/env python3
"""Writes the wire fixture frames with an encoder that shares no code with
the Rust implementation: 4-byte big-endian length, then compact JSON with
fields in protocol order."""

import base64
import json
import os
import struct

HERE = os.path.dirname(os.path.abspath(__file__))


def request(id, op, function=None, args=None, blobs=None):
    return {"id": id, "op": op, "function": function, "args": args or {}, "blobs": blobs or []}


def response(id, ok, result=None, error=None, state=None, functions=None,
             protocol_version=None, module=None, blobs=None, written=None):
    return {
        "id": id, "ok": ok, "result": result, "error": error, "state": state,
        "functions": functions, "protocol_version": protocol_version,
        "module": module, "blobs": blobs or [], "written": written or [],
    }


def fn(name, params, doc, states=None):
    return {
        "name": name,
        "params": [{"name": n, "kind": k} for n, k in params],
        "documentation": doc,
        "visible_in_states": states,
    }


def blob(name, media_type, raw):
    return {"name": name, "media_type": media_type, "data": base64.b64encode(raw).decode("ascii")}


FRAMES = [
    ("01_describe_request", request(1, "describe")),
    ("02_describe_response", response(
        1, True, functions=[fn("REVERSE", [("text", "string")], "Reverses text.")],
        protocol_version=1, module="echo")),
    ("03_invoke_request", request(2, "invoke", "REVERSE", {"text": {"text": "abc"}})),
    ("04_invoke_response", response(2, True, result="cba")),
    ("05_state_request", request(3, "state")),
    ("06_state_response", response(
        3, True, result="Content: (no page loaded)\nAvailable: BROWSE", state="Start",
        functions=[
            fn("BROWSE", [("target", "string")], "Open a document.", ["Start"]),
            fn("INPUT", [("field", "string"), ("text", "heredoc-body")], "Fill a field.", ["PageLoaded"]),
        ])),
    ("07_invoke_refs_request", request(
        4, "invoke", "BASH",
        {
            "count": {"number": 2.0},
            "script": {"parts": [{"text": "cat > out.txt <<'EOF'\n"}, {"ref": "draft"}, {"text": "\nEOF"}]},
        },
        [blob("draft", "text/plain; charset=utf-8", "first line\nsecond line".encode())])),
    ("08_blob_response", response(
        4, True, result="wrote out.txt",
        blobs=[blob("image", "application/octet-stream", bytes(range(256)))],
        written=["out.txt", "logs/run.log"])),
    ("09_error_response", response(5, False, error="SCROLL is not available in state Start")),
    ("10_unicode_request", request(
        6, "invoke", "ECHO",
        {"text": {"text": "café ☃ \U0001F30A \"quoted\" back\\slash\ttab\u0001"}})),
]


def main():
    for name, msg in FRAMES:
        payload = json.dumps(msg, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
        with open(os.path.join(HERE, name + ".bin"), "wb") as f:
            f.write(struct.pack(">I", len(payload)) + payload)


if __name__ == "__main__":
    main()
