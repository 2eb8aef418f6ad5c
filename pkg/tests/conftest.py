"""Shared fixtures: canned prompt datasets, plan configs, and a stub chat server."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

MBPP_TEMPLATE = (
    "Write a Python function to solve this task. Only provide the code. "
    "Task: {task} Code:"
)

TASKS = [
    "Write a function to add two numbers.",
    "Write a function to reverse a string.",
    "Write a function to find the largest item.",
    "Write a function to count vowels in text.",
    "Write a function to merge two sorted lists.",
    "Write a function to test if a number is prime.",
    "Write a function to flatten a nested list.",
    "Write a function to compute a factorial.",
    "Write a function to remove duplicate items.",
    "Write a function to sum a list of numbers.",
]


def make_prompt_file(path, count=10, pass1=None):
    """Write a JSONL prompt dataset of MBPP-style template prompts."""
    with open(path, "w", encoding="utf-8") as sink:
        for i in range(count):
            doc = {"prompt_id": f"p{i:03d}", "text": MBPP_TEMPLATE.format(task=TASKS[i % len(TASKS)])}
            if pass1 is not None:
                doc["pass1_baseline"] = pass1
            sink.write(json.dumps(doc) + "\n")
    return path


@pytest.fixture
def prompt_file(tmp_path):
    return make_prompt_file(tmp_path / "prompts.jsonl")


@pytest.fixture
def synthetic_plan(tmp_path, prompt_file):
    """One-model one-benchmark plan against a zero-dispersion synthetic backend."""
    config = {
        "models": ["synthetic-demo"],
        "benchmarks": [{"profile": "mbpp", "prompts": str(prompt_file)}],
        "ratios": [1.0, 0.3],
        "prompts_per_cell": 4,
        "replicates": 2,
        "seed": 7,
        "backends": {
            "synthetic-demo": {
                "kind": "synthetic",
                "params": {"t0": 20, "alpha": 100, "tau": 0.35, "t_max": 1024,
                           "beta": 0.74, "dispersion": 0.0},
                "seed": 11,
            }
        },
    }
    path = tmp_path / "plan.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


class _StubHandler(BaseHTTPRequestHandler):
    """Serves queued (status, body) pairs; records request payloads and headers."""

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else {}
        self.server.seen.append({"payload": body, "headers": dict(self.headers)})
        if self.server.responses:
            status, doc = self.server.responses.pop(0)
        else:
            status, doc = 200, self.server.default_response
        data = json.dumps(doc).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


def chat_response(text, completion_tokens=None, finish_reason="stop"):
    doc = {
        "choices": [{"message": {"role": "assistant", "content": text},
                     "finish_reason": finish_reason}],
    }
    if completion_tokens is not None:
        doc["usage"] = {"completion_tokens": completion_tokens, "prompt_tokens": 5}
    return doc


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    server.responses = []
    server.seen = []
    server.default_response = chat_response("hello from the stub", completion_tokens=4)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    server.endpoint = f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    yield server
    server.shutdown()
    thread.join(timeout=5)
