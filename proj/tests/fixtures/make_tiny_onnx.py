#!/usr/bin/env python3
"""Writes a 2x2x3 -> 3-class linear ONNX model plus its sidecar manifest.

logits[k] = sum W[k, c, h, w] * x[c, h, w], W = (k+1)(c+1)(2h+w+1)/10, NCHW
input with a dynamic batch axis. Normalization (mean 0.5, std 0.25) is left
to the caller, as with exported torchvision models.
"""

import argparse
import json
import pathlib

import numpy as np
import onnx
from onnx import TensorProto, helper, numpy_helper


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", required=True)
    args = parser.parse_args()
    out = pathlib.Path(args.out)

    k, c, h, w = np.meshgrid(np.arange(3), np.arange(3), np.arange(2), np.arange(2), indexing="ij")
    weights = ((k + 1) * (c + 1) * (2 * h + w + 1) / 10.0).astype(np.float32).reshape(3, 12)

    graph = helper.make_graph(
        [
            helper.make_node("Flatten", ["input"], ["flat"], axis=1),
            helper.make_node("Gemm", ["flat", "weights"], ["logits"], transB=1),
        ],
        "tiny_linear",
        [helper.make_tensor_value_info("input", TensorProto.FLOAT, ["batch", 3, 2, 2])],
        [helper.make_tensor_value_info("logits", TensorProto.FLOAT, ["batch", 3])],
        initializer=[numpy_helper.from_array(weights, "weights")],
    )
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", 13)])
    model.ir_version = 8
    onnx.checker.check_model(model)
    onnx.save(model, out)

    manifest = {
        "model_name": "tiny_linear",
        "onnx_path": out.name,
        "input_shape": [2, 2, 3],
        "mean": [0.5, 0.5, 0.5],
        "std": [0.25, 0.25, 0.25],
        "class_count": 3,
        "logits_or_probs": "logits",
        "opset": 13,
        "source_weights_id": "synthetic",
    }
    out.with_suffix(".manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


if __name__ == "__main__":
    main()
