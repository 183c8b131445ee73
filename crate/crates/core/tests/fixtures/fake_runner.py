"""Stand-in guest runner for client tests. It does not execute the loaded
source; markers in the source pick a canned behaviour instead."""

import json
import math
import sys
import time

source = None


def reply(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


for line in sys.stdin:
    try:
        req = json.loads(line)
    except ValueError as e:
        reply({"v": 1, "status": "runtime_failure", "detail": "protocol violation: %s" % e})
        continue
    op = req.get("op")
    if op == "shutdown":
        reply({"v": 1, "status": "ok"})
        break
    if op == "load":
        if "SYNTAX" in req["source"]:
            reply({"v": 1, "status": "parse_failure", "detail": "invalid syntax (line 1)"})
            continue
        source = req["source"]
        reply({"v": 1, "status": "ok"})
        continue
    if op != "predict":
        reply({"v": 1, "status": "runtime_failure", "detail": "unknown op %r" % op})
        continue
    if source is None:
        reply({"v": 1, "status": "runtime_failure", "detail": "no model loaded"})
        continue
    rows = req["rows"]
    if "HANG" in source:
        time.sleep(60)
    if "CRASH" in source:
        sys.exit(3)
    if "BIG" in source:
        reply({"v": 1, "status": "ok", "values": [0.5] * (300 * 1024)})
        continue
    if "V2" in source:
        reply({"v": 2, "status": "ok", "values": [0.5] * len(rows)})
        continue
    values = [1 / (1 + math.exp(-sum(r.values()))) for r in rows]
    if "NAN" in source:
        values = [float("nan")] * len(rows)
    if "SHORT" in source:
        values = values[:-1]
    if "TEXT" in source:
        values = ["abc"] * len(rows)
    reply({"v": 1, "status": "ok", "values": values})
