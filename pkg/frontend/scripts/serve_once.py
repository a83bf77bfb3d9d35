"""Serve exactly one search session and print its schedule record.

Usage: python3 scripts/serve_once.py '{"k": 4, ...}'
Prints the listening address, then the completed record between
RECORD_BEGIN/RECORD_END markers once a session finishes.
"""

import json
import sys
import time

from autolrs.controller import SearchConfig
from autolrs.protocol import LrSearchServer


def main() -> None:
    config = SearchConfig(**json.loads(sys.argv[1]))
    with LrSearchServer(config, host="127.0.0.1", port=0) as server:
        print(f"listening on {server.host}:{server.port}", flush=True)
        deadline = time.monotonic() + 120.0
        while not server.completed_records:
            if time.monotonic() > deadline:
                print("RECORD_TIMEOUT", flush=True)
                return
            time.sleep(0.02)
        print("RECORD_BEGIN", flush=True)
        sys.stdout.write(server.completed_records[0].to_json())
        print("RECORD_END", flush=True)


if __name__ == "__main__":
    main()
