"""The same search, but over TCP: a server owns the search state and a
trainer connects as a client speaking newline-delimited JSON.

This is the path a real training job uses; here the client is the simulated
trainer, so the whole session runs in one process over loopback.
"""

import socket

from autolrs.controller import SearchConfig
from autolrs.messages import Hello
from autolrs.protocol import LrSearchServer, encode
from autolrs.simtrainer import Quadratic, SimModel, run_loopback_session

config = SearchConfig(
    lr_min=1e-3,
    lr_max=1.0,
    k=4,
    tau_initial=50,
    tau_max=100,
    val_every=5,
    budget_steps=300,
)

with LrSearchServer(config, host="127.0.0.1", port=0) as server:
    print(f"server on {server.host}:{server.port}")

    # peek at the wire first: say hello by hand and read the first command
    with socket.create_connection((server.host, server.port)) as raw:
        raw.sendall(encode(Hello()))
        first = raw.makefile("rb").readline()
        print(f"first command on the wire: {first.decode().strip()}")

    # now run a real session end to end; the shallow curvature keeps the
    # optimum at the top of the interval for every stage
    trainer = run_loopback_session(
        server.host, server.port, SimModel(Quadratic([0.05]), seed=config.seed)
    )
    print(f"session ended: {trainer.shutdown_reason}")

    record = server.completed_records[-1]
    print(f"schedule has {len(record.entries)} LR changes:")
    for step, lr in record.entries:
        print(f"  step {step:>4} -> lr {lr:.5g}")
