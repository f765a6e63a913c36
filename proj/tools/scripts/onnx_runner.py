#!/usr/bin/env python3
"""Serve an ONNX classifier over the causex subprocess protocol.

Reads newline-delimited JSON requests on stdin:
    {"id": 7, "shape": [H, W, C], "data_b64": "<little-endian float32, HWC>"}
and writes one response per request on stdout:
    {"id": 7, "label": 3, "confidences": [...]}

Inputs arrive already normalized. Requests waiting on stdin are grouped into
one session run. Scores are returned as the graph emits them; the caller
decides whether they are logits.
"""

import argparse
import base64
import json
import os
import select
import sys

import numpy as np
import onnxruntime as ort


def parse_args():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--model", required=True, help="path to the .onnx file")
    parser.add_argument("--max-batch", type=int, default=64)
    parser.add_argument("--threads", type=int, default=0, help="intra-op threads, 0 = runtime default")
    return parser.parse_args()


class Model:
    def __init__(self, path, threads):
        options = ort.SessionOptions()
        if threads:
            options.intra_op_num_threads = threads
        self.session = ort.InferenceSession(path, options, providers=["CPUExecutionProvider"])
        model_input = self.session.get_inputs()[0]
        self.input_name = model_input.name
        dims = model_input.shape
        # torchvision exports are NCHW; fall back to NHWC when the channel axis
        # is visibly last.
        self.channels_first = not (len(dims) == 4 and dims[3] in (1, 3) and dims[1] not in (1, 3))
        batch_dim = dims[0] if dims else None
        self.fixed_batch = batch_dim if isinstance(batch_dim, int) and batch_dim > 0 else None

    def run(self, images):
        batch = np.stack(images).astype(np.float32, copy=False)
        if self.channels_first:
            batch = np.ascontiguousarray(batch.transpose(0, 3, 1, 2))
        if self.fixed_batch is not None and self.fixed_batch != len(images):
            return np.concatenate([self._run(batch[i:i + 1]) for i in range(len(images))])
        return self._run(batch)

    def _run(self, batch):
        scores = self.session.run(None, {self.input_name: batch})[0]
        return np.asarray(scores, dtype=np.float64).reshape(batch.shape[0], -1)


def decode(request):
    h, w, c = (int(v) for v in request["shape"])
    data = np.frombuffer(base64.b64decode(request["data_b64"]), dtype="<f4")
    if data.size != h * w * c:
        raise ValueError(f"request {request['id']}: payload has {data.size} floats, shape wants {h * w * c}")
    return data.reshape(h, w, c)


class LineReader:
    """Unbuffered line reader so select() reflects what is really pending."""

    def __init__(self, fd):
        self.fd = fd
        self.pending = b""
        self.eof = False

    def _fill(self, block):
        if not block and not select.select([self.fd], [], [], 0)[0]:
            return False
        chunk = os.read(self.fd, 1 << 20)
        if not chunk:
            self.eof = True
            return False
        self.pending += chunk
        return True

    def lines(self, limit):
        out = []
        while len(out) < limit:
            newline = self.pending.find(b"\n")
            if newline >= 0:
                line, self.pending = self.pending[:newline], self.pending[newline + 1:]
                if line.strip():
                    out.append(line)
                continue
            if self.eof or not self._fill(block=not out):
                break
        return out


def main():
    args = parse_args()
    model = Model(args.model, args.threads)
    reader = LineReader(sys.stdin.fileno())
    out = sys.stdout
    while True:
        lines = reader.lines(args.max_batch)
        if not lines:
            if reader.eof:
                return 0
            continue
        requests = [json.loads(line) for line in lines]
        scores = model.run([decode(r) for r in requests])
        for request, row in zip(requests, scores):
            reply = {"id": request["id"], "label": int(np.argmax(row)), "confidences": row.tolist()}
            out.write(json.dumps(reply) + "\n")
        out.flush()


if __name__ == "__main__":
    sys.exit(main())
