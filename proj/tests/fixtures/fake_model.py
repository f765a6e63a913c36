#!/usr/bin/env python3
"""Test double for the subprocess protocol.

Scores images like the count-conf builtin: label 1 iff pixel 0 is on, winner
confidence 0.5 + (other pixels on) / (2 * H * W), losers split the rest.
Flags inject the misbehaviours the client must survive or report.
"""

import argparse
import base64
import json
import math
import os
import select
import sys

import numpy as np


def parse_args():
    p = argparse.ArgumentParser()
    p.add_argument("--reorder", action="store_true", help="answer pending requests in reverse order")
    p.add_argument("--logits", action="store_true", help="emit log-probabilities instead of probabilities")
    p.add_argument("--crash-after", type=int, default=-1, help="exit(3) after this many replies")
    p.add_argument("--nan", action="store_true", help="reply with a NaN confidence")
    p.add_argument("--unknown-id", action="store_true", help="reply with an id never sent")
    p.add_argument("--short", action="store_true", help="reply with too few confidences")
    p.add_argument("--wrong-label", action="store_true", help="report a label that is not the argmax")
    p.add_argument("--garbage", action="store_true", help="reply with a line that is not JSON")
    p.add_argument("--silent", action="store_true", help="never reply")
    return p.parse_args()


def score(image):
    on = image.mean(axis=2) > 0.5
    flat = on.reshape(-1)
    others = int(flat[1:].sum())
    winner = 0.5 + others / (2.0 * flat.size)
    label = 1 if flat[0] else 0
    probs = [(1.0 - winner) / 2.0] * 3
    probs[label] = winner
    return label, probs


def pending_lines(fd, buf):
    """Blocks for at least one line, then takes whatever else is already waiting."""
    lines = []
    while True:
        while b"\n" in buf[0]:
            line, buf[0] = buf[0].split(b"\n", 1)
            if line.strip():
                lines.append(line)
        if lines and not select.select([fd], [], [], 0.05)[0]:
            return lines
        chunk = os.read(fd, 1 << 16)
        if not chunk:
            return lines if lines else None
        buf[0] += chunk


def main():
    args = parse_args()
    fd = sys.stdin.fileno()
    buf = [b""]
    replies = 0
    sys.stderr.write("fake model ready\n")
    sys.stderr.flush()
    while True:
        lines = pending_lines(fd, buf)
        if lines is None:
            return 0
        if args.silent:
            continue
        requests = [json.loads(l) for l in lines]
        if args.reorder:
            requests.reverse()
        for req in requests:
            if args.crash_after >= 0 and replies >= args.crash_after:
                sys.stderr.write("fake model: simulated crash\n")
                sys.stderr.flush()
                os._exit(3)
            h, w, c = req["shape"]
            data = np.frombuffer(base64.b64decode(req["data_b64"]), dtype="<f4").reshape(h, w, c)
            label, probs = score(data)
            confidences = [math.log(p) for p in probs] if args.logits else probs
            reply = {"id": req["id"], "label": label, "confidences": confidences}
            if args.nan:
                reply["confidences"][0] = float("nan")
            if args.unknown_id:
                reply["id"] = req["id"] + 1000000
            if args.short:
                reply["confidences"] = confidences[:1]
            if args.wrong_label:
                reply["label"] = (label + 1) % 3
            text = "this is not json" if args.garbage else json.dumps(reply)
            sys.stdout.write(text + "\n")
            replies += 1
        sys.stdout.flush()


if __name__ == "__main__":
    sys.exit(main())
