#!/usr/bin/env python3
"""Serve a stub exchange-directory backend until interrupted.

The generation stub copies the request's source frame T times; the flow stub
answers every request with zero flow. Useful for exercising
`flowsim simulate --generator external` or `--estimator external` without a
real model behind the exchange directory.
"""

import argparse
import time

from flowsim.backends import start_stub_backend


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("exchange_dir", help="directory watched for requests")
    parser.add_argument("--kind", choices=("generation", "flow"), default="generation")
    parser.add_argument("--poll", type=float, default=0.1, help="poll interval, seconds")
    parser.add_argument(
        "--drop-last",
        type=int,
        default=0,
        help="withhold this many trailing frames (generation only, for testing)",
    )
    args = parser.parse_args()

    thread, stop = start_stub_backend(
        args.exchange_dir, kind=args.kind, poll=args.poll, drop_last=args.drop_last
    )
    print(f"serving {args.kind} requests in {args.exchange_dir} (Ctrl-C to stop)")
    try:
        while thread.is_alive():
            time.sleep(0.5)
    except KeyboardInterrupt:
        stop.set()
        thread.join(timeout=5)


if __name__ == "__main__":
    main()
