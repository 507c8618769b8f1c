#!/usr/bin/env python3
"""Minimal bridge used by the host-side tests.

The explainer name is the last argument:
  echo         return the test matrix as attributions
  probe        ask the host for predictions of the first k test rows
               (config["probe_rows"], default 3) and return them as
               attributions: row r repeats prediction r, later rows are 0
  random       i.i.d. standard-normal weights seeded from config["seed"]
  sleep        never reply to the explain request
  bad-version  answer the handshake with version 99
  crash        exit with a traceback on the explain request
  garbage      reply with a line that is not JSON
"""
import json
import random
import sys
import time


def send(msg):
    sys.stdout.write(json.dumps(msg) + "\n")
    sys.stdout.flush()


def fmt(v):
    return "%.16e" % v


def parse_matrix(rows):
    return [[float(v) for v in row] for row in rows]


def main():
    name = sys.argv[-1]
    next_id = 1000
    for line in sys.stdin:
        msg = json.loads(line)
        kind = msg["kind"]
        if kind == "hello":
            send({"kind": "hello", "version": 99 if name == "bad-version" else 1})
        elif kind == "explain_request":
            rid = msg["id"]
            test = parse_matrix(msg["test"])
            if name == "echo":
                send({"kind": "attributions", "id": rid, "weights": [[fmt(v) for v in row] for row in test]})
            elif name == "probe":
                k = msg.get("config", {}).get("probe_rows", 3)
                send({"kind": "predict_request", "id": next_id, "rows": msg["test"][:k]})
                reply = json.loads(sys.stdin.readline())
                assert reply["kind"] == "predict_response" and reply["id"] == next_id
                preds = reply["predictions"]
                assert len(preds) == min(k, len(test))
                d = len(test[0])
                weights = [[preds[r]] * d if r < len(preds) else ["0"] * d for r in range(len(test))]
                send({"kind": "attributions", "id": rid, "weights": weights})
            elif name == "random":
                rng = random.Random(msg.get("config", {}).get("seed", 0))
                d = len(test[0])
                weights = [[fmt(rng.gauss(0.0, 1.0)) for _ in range(d)] for _ in test]
                send({"kind": "attributions", "id": rid, "weights": weights})
            elif name == "sleep":
                time.sleep(60)
            elif name == "crash":
                send({"kind": "error", "id": rid, "message": "explainer failed",
                      "traceback": "Traceback (most recent call last):\n  ValueError: boom"})
            elif name == "garbage":
                sys.stdout.write("this is not json\n")
                sys.stdout.flush()
            else:
                send({"kind": "error", "id": rid, "message": "unknown explainer " + name})


if __name__ == "__main__":
    main()
