#!/usr/bin/env python3
"""Download the public datasets listed in data/manifest.json and rewrite them
as comma-separated files with a header row."""

import argparse
import csv
import io
import json
import pathlib
import sys
import urllib.request

ROOT = pathlib.Path(__file__).resolve().parent.parent


def fetch(name, entry, force):
    out = ROOT / entry["output"]
    if out.exists() and not force:
        print(f"{name}: {out} exists, skipping")
        return
    with urllib.request.urlopen(entry["url"], timeout=60) as resp:
        text = resp.read().decode("utf-8")
    rows = list(csv.reader(io.StringIO(text), delimiter=entry["source_delimiter"]))
    if entry["source_header"]:
        rows = rows[1:]
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    width = len(entry["columns"])
    bad = [i for i, r in enumerate(rows) if len(r) != width]
    if bad:
        sys.exit(f"{name}: row {bad[0] + 1} has {len(rows[bad[0]])} fields, expected {width}")
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(entry["columns"])
        w.writerows([c.strip() for c in r] for r in rows)
    print(f"{name}: wrote {len(rows)} rows to {out}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("names", nargs="*", help="datasets to fetch (default: all)")
    ap.add_argument("--force", action="store_true", help="overwrite existing files")
    args = ap.parse_args()
    manifest = json.loads((ROOT / "data" / "manifest.json").read_text())
    for name in args.names or manifest:
        if name not in manifest:
            sys.exit(f"unknown dataset '{name}'; known: {', '.join(manifest)}")
        fetch(name, manifest[name], args.force)


if __name__ == "__main__":
    main()
