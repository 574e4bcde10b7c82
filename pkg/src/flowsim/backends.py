"""Stub exchange-directory backends.

These serve the same file protocols as a real image-to-video model or a
learned flow estimator, so the full pipeline runs offline: the generation
stub copies the source image T times, the flow stub answers with zero flow
or an echoed .flo file. Tests and the acceptance suite run them in a
background thread.
"""

from __future__ import annotations

import json
import shutil
import threading
import time
from pathlib import Path

import numpy as np

from .flow_core import FlowField, write_flo


def serve_generation_request(req: Path, drop_last: int = 0) -> None:
    """Answer one generation request by copying the source frame T times.

    `drop_last` withholds that many trailing frames, simulating a backend
    that fails to produce a complete sequence.
    """
    descriptor = json.loads((req / "request.json").read_text())
    num_frames = descriptor["T"] - drop_last
    for t in range(1, num_frames + 1):
        shutil.copyfile(req / "source.png", req / f"frame_{t:03d}.png")
    (req / "DONE").touch()


def serve_flow_request(req: Path, flo_path=None) -> None:
    """Answer one flow request with zero flow, or echo a precomputed .flo."""
    if flo_path is not None:
        shutil.copyfile(flo_path, req / "flow.flo")
    else:
        descriptor = json.loads((req / "request.json").read_text())
        h, w = descriptor["height"], descriptor["width"]
        write_flo(FlowField(np.zeros((h, w)), np.zeros((h, w))), req / "flow.flo")
    (req / "DONE").touch()


def _watch(root: Path, request_file: str, handler, stop: threading.Event, poll: float):
    served = set()
    while not stop.is_set():
        for req in sorted(root.glob("*/")):
            if req in served or not (req / request_file).is_file():
                continue
            if (req / "DONE").exists():
                served.add(req)
                continue
            try:
                handler(req)
            except (OSError, ValueError):
                # request still being written; retry on the next poll
                continue
            served.add(req)
        time.sleep(poll)


def start_stub_backend(
    root,
    kind: str = "generation",
    poll: float = 0.02,
    drop_last: int = 0,
    flo_path=None,
):
    """Run a stub backend thread over the exchange directory.

    Returns (thread, stop_event); set the event to shut the thread down.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    stop = threading.Event()
    if kind == "generation":
        handler = lambda req: serve_generation_request(req, drop_last=drop_last)
    elif kind == "flow":
        handler = lambda req: serve_flow_request(req, flo_path=flo_path)
    else:
        raise ValueError(f"unknown backend kind {kind!r}")
    thread = threading.Thread(
        target=_watch, args=(root, "request.json", handler, stop, poll), daemon=True
    )
    thread.start()
    return thread, stop
