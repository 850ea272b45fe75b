"""Merge hourly demand and price exports into the ``date,hour,demand,price`` format.

Grid operators publish hourly demand and day-ahead prices as separate
downloads (usually behind an API token), so fetching is left to the user.
This script takes two CSV exports with a timestamp column and a value
column, keeps working days of the requested month, and writes the file
read by ``mfgprice calibrate``::

    python scripts/prepare_market_csv.py demand.csv price.csv --month 2022-03 \
        --time-column datetime --value-column value -o market.csv

Timestamps must be ISO 8601; only their local date and hour are used.
"""

import argparse
import csv
import sys
from datetime import datetime


def read_series(path, time_column, value_column):
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            stamp = datetime.fromisoformat(row[time_column])
            out[(stamp.date().isoformat(), stamp.hour)] = float(row[value_column])
    return out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("demand")
    parser.add_argument("price")
    parser.add_argument("--month", required=True, help="YYYY-MM")
    parser.add_argument("--time-column", default="datetime")
    parser.add_argument("--value-column", default="value")
    parser.add_argument("-o", "--output", default="-")
    args = parser.parse_args(argv)

    demand = read_series(args.demand, args.time_column, args.value_column)
    price = read_series(args.price, args.time_column, args.value_column)
    keys = sorted(
        k for k in demand.keys() & price.keys()
        if k[0].startswith(args.month) and datetime.fromisoformat(k[0]).weekday() < 5
    )  # fmt: skip
    days = {}
    for date, hour in keys:
        days.setdefault(date, []).append(hour)
    complete = {d for d, hours in days.items() if sorted(hours) == list(range(24))}
    dropped = sorted(set(days) - complete)
    if dropped:
        print(f"dropping incomplete days: {', '.join(dropped)}", file=sys.stderr)

    fh = sys.stdout if args.output == "-" else open(args.output, "w", newline="")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["date", "hour", "demand", "price"])
    for date, hour in keys:
        if date in complete:
            writer.writerow([date, hour, demand[(date, hour)], price[(date, hour)]])
    if fh is not sys.stdout:
        fh.close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
