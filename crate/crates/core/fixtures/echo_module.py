#!/usr/bin/env python3
"""A tool module written without any of the Rust code: it speaks the framed
wire protocol directly and offers REVERSE."""

import json
import os
import socket
import struct
import sys
import threading

FUNCTIONS = [{
    "name": "REVERSE",
    "params": [{"name": "text", "kind": "string"}],
    "documentation": "Reverses the characters of a text.",
    "visible_in_states": None,
}]


def response(id, ok, result=None, error=None, functions=None, protocol_version=None, module=None):
    return {
        "id": id, "ok": ok, "result": result, "error": error, "state": None,
        "functions": functions, "protocol_version": protocol_version,
        "module": module, "blobs": [], "written": [],
    }


def read_exact(conn, n):
    buf = b""
    while len(buf) < n:
        chunk = conn.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def text_of(arg):
    if "text" in arg:
        return arg["text"]
    if "number" in arg:
        return str(arg["number"])
    if "parts" in arg:
        return "".join(text_of(p) for p in arg["parts"])
    raise ValueError("references are not supported")


def handle(req):
    op = req.get("op")
    if op == "describe":
        return response(req["id"], True, "", functions=FUNCTIONS, protocol_version=1, module="echo")
    if op == "state":
        return response(req["id"], True, "ready", functions=FUNCTIONS)
    if op == "invoke" and req.get("function") == "REVERSE":
        try:
            return response(req["id"], True, text_of(req["args"]["text"])[::-1])
        except (KeyError, ValueError) as e:
            return response(req["id"], False, error="bad argument: %s" % e)
    return response(req.get("id", 0), False, error="unknown function %s" % req.get("function"))


def serve(conn):
    with conn:
        while True:
            head = read_exact(conn, 4)
            if head is None:
                return
            payload = read_exact(conn, struct.unpack(">I", head)[0])
            if payload is None:
                return
            out = json.dumps(handle(json.loads(payload)), separators=(",", ":"), ensure_ascii=False).encode()
            conn.sendall(struct.pack(">I", len(out)) + out)


def main():
    host, port = os.environ.get("IACT_MODULE_LISTEN", "127.0.0.1:0").rsplit(":", 1)
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, int(port)))
    srv.listen()
    print("LISTEN %s:%d" % srv.getsockname(), flush=True)
    while True:
        conn, _ = srv.accept()
        threading.Thread(target=serve, args=(conn,), daemon=True).start()


if __name__ == "__main__":
    sys.exit(main())
