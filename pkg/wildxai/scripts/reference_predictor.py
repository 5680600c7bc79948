"""Reference external predictor: serves a saved native model over the line protocol.

Usage:
    python -m wildxai.scripts.reference_predictor --model runs/model.json
"""
import argparse
import logging
import sys
from typing import List, Optional, TextIO

import numpy as np

from wildxai.exceptions import WildxaiError
from wildxai.services.predictors import load_model

logger = logging.getLogger(__name__)


def serve(model_path: str, stdin: TextIO = sys.stdin, stdout: TextIO = sys.stdout) -> int:
    """
    Answer protocol requests until ``END`` or end of input.

    Returns:
        int: Process exit code
    """
    handle = load_model(model_path)
    n, l = handle.input_shape

    hello = stdin.readline().split()
    if hello != ["XAIP/1", "predict_proba", str(n), str(l)]:
        stdout.write(f"ERR expected shape {n} {l}\n")
        stdout.flush()
        return 2
    stdout.write("OK concurrent\n")
    stdout.flush()

    for line in stdin:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "END":
            break
        if parts[0] != "BATCH" or len(parts) != 2 or not parts[1].isdigit():
            logger.error(f"Unexpected request line: {line.strip()!r}")
            return 2
        k = int(parts[1])
        try:
            rows = [np.array(stdin.readline().split(","), dtype=np.float64) for _ in range(k)]
            batch = np.array(rows).reshape(k, n, l) if k else np.zeros((0, n, l))
        except ValueError as e:
            logger.error(f"Malformed batch of {k} rows: {e}")
            return 2
        probabilities = handle.predict_proba(batch)
        stdout.write("".join(f"{p!r}\n" for p in probabilities.tolist()))
        stdout.flush()
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Serve a saved wildxai model over XAIP/1")
    parser.add_argument("--model", required=True, help="model file written by `wildxai train`")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    try:
        return serve(args.model)
    except WildxaiError as e:
        logger.error(f"{e.token}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
