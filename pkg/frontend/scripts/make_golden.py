"""Regenerate the golden session transcript fixture.

Runs a real server over loopback with the reference simulated trainer as the
client, recording every line in causal order. The adapter test replays the
server half and checks the client half matches by decoded value.

Usage: python3 scripts/make_golden.py   (from the frontend/ directory)
"""

import json
import socket
from pathlib import Path

from autolrs.controller import SearchConfig
from autolrs.messages import Hello, Shutdown
from autolrs.protocol import PROTOCOL_VERSION, LineReader, LrSearchServer, decode, encode
from autolrs.simtrainer import Quadratic, SimModel, SimulatedTrainer, _wire_safe

CURVATURE = 0.05
CONFIG = dict(
    lr_min=1e-3,
    lr_max=1.0,
    k=3,
    tau_initial=20,
    tau_max=40,
    val_every=2,
    warmup_steps=3,
    warmup_peak_lr=0.5,
    budget_steps=63,
    seed=0,
)


def main() -> None:
    out_path = Path(__file__).resolve().parent.parent / "test" / "fixtures" / "golden_session.jsonl"
    out_path.parent.mkdir(parents=True, exist_ok=True)

    config = SearchConfig(**CONFIG)
    trainer = SimulatedTrainer(
        SimModel(Quadratic([CURVATURE]), seed=config.seed),
        config.val_minibatches,
        config.val_every,
    )
    transcript = []

    with LrSearchServer(config, host="127.0.0.1", port=0) as server:
        with socket.create_connection((server.host, server.port), timeout=30.0) as sock:
            hello = encode(Hello(PROTOCOL_VERSION, {}))
            transcript.append({"dir": "c2s", "line": hello.decode().rstrip("\n")})
            sock.sendall(hello)
            reader = LineReader(sock)
            while True:
                line = reader.readline()
                if line is None:
                    break
                transcript.append({"dir": "s2c", "line": line.decode().rstrip("\n")})
                message = decode(line)
                events = trainer.execute(message)
                if isinstance(message, Shutdown):
                    break
                for event in events:
                    wire = encode(_wire_safe(event))
                    transcript.append({"dir": "c2s", "line": wire.decode().rstrip("\n")})
                    sock.sendall(wire)

    header = {"config": CONFIG, "curvature": CURVATURE}
    with out_path.open("w") as fh:
        fh.write(json.dumps(header) + "\n")
        for entry in transcript:
            fh.write(json.dumps(entry) + "\n")
    counts = {
        "s2c": sum(1 for e in transcript if e["dir"] == "s2c"),
        "c2s": sum(1 for e in transcript if e["dir"] == "c2s"),
    }
    print(f"wrote {out_path} ({counts['s2c']} server lines, {counts['c2s']} client lines)")


if __name__ == "__main__":
    main()
