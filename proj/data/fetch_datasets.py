#!/usr/bin/env python3
"""Download and canonicalize the evaluation datasets.

Produces CSVs matching the bundled schema files:

  data/adult/adult.csv        from the UCI census-income training split
  data/bank/bank.csv          from the UCI bank-marketing full file
  data/phishing/phishing.csv  from a user-supplied Phishing_Legitimate_full.csv

The phishing file is not fetched automatically (its host requires a browser
session); download it manually and pass --phishing-src. Re-running overwrites
the canonical CSVs but reuses cached downloads.
"""

import argparse
import csv
import io
import sys
import urllib.request
import zipfile
from pathlib import Path

ADULT_URL = "https://archive.ics.uci.edu/ml/machine-learning-databases/adult/adult.data"
BANK_URL = "https://archive.ics.uci.edu/ml/machine-learning-databases/00222/bank.zip"

ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
]
ADULT_KEEP = [c for c in ADULT_COLUMNS if c != "education"]

BANK_KEEP = [
    "age", "job", "marital", "education", "balance", "day", "duration",
    "campaign", "pdays", "previous", "poutcome", "y",
]
POUTCOME_CODES = {"unknown": "-1", "failure": "0", "other": "1", "success": "2"}

PHISHING_KEEP = [
    "UrlLength", "NumNumericChars", "NumSensitiveWords", "PctExtHyperlinks",
    "PctNullSelfRedirectHyperlinks", "PctExtNullSelfRedirectHyperlinksRT",
    "ExtMetaScriptLinkRT", "SubmitInfoToEmail", "InsecureForms",
    "FrequentDomainNameMismatch", "CLASS_LABEL",
]


def download(url: str, dest: Path) -> Path:
    if dest.exists() and dest.stat().st_size > 0:
        print(f"  cached  {dest}")
        return dest
    print(f"  fetch   {url}")
    dest.parent.mkdir(parents=True, exist_ok=True)
    with urllib.request.urlopen(url, timeout=120) as r:
        dest.write_bytes(r.read())
    return dest


def write_rows(dest: Path, header, rows) -> None:
    dest.parent.mkdir(parents=True, exist_ok=True)
    with dest.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
    print(f"  wrote   {dest} ({len(rows)} rows)")


def prep_adult(data_dir: Path) -> None:
    print("adult:")
    raw = download(ADULT_URL, data_dir / "adult" / "raw" / "adult.data")
    rows = []
    for line in raw.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != len(ADULT_COLUMNS):
            raise SystemExit(f"adult: expected {len(ADULT_COLUMNS)} cells, got {len(cells)}")
        rec = dict(zip(ADULT_COLUMNS, cells))
        rows.append([rec[c] for c in ADULT_KEEP])
    if len(rows) != 32561:
        print(f"  warning: expected 32561 rows, got {len(rows)}", file=sys.stderr)
    write_rows(data_dir / "adult" / "adult.csv", ADULT_KEEP, rows)


def prep_bank(data_dir: Path) -> None:
    print("bank:")
    raw = download(BANK_URL, data_dir / "bank" / "raw" / "bank.zip")
    with zipfile.ZipFile(raw) as z:
        text = z.read("bank-full.csv").decode("utf-8")
    reader = csv.reader(io.StringIO(text), delimiter=";")
    header = next(reader)
    idx = {name: header.index(name) for name in BANK_KEEP}
    rows = []
    for cells in reader:
        if not cells:
            continue
        rec = {name: cells[i] for name, i in idx.items()}
        rec["job"] = rec["job"].rstrip(".")
        rec["poutcome"] = POUTCOME_CODES[rec["poutcome"]]
        rows.append([rec[c] for c in BANK_KEEP])
    if len(rows) != 45211:
        print(f"  warning: expected 45211 rows, got {len(rows)}", file=sys.stderr)
    write_rows(data_dir / "bank" / "bank.csv", BANK_KEEP, rows)


def prep_phishing(data_dir: Path, src: Path) -> None:
    print("phishing:")
    with src.open(newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        idx = {name: header.index(name) for name in PHISHING_KEEP}
        rows = []
        for cells in reader:
            if not cells:
                continue
            rows.append([cells[idx[c]] for c in PHISHING_KEEP])
    if len(rows) != 10000:
        print(f"  warning: expected 10000 rows, got {len(rows)}", file=sys.stderr)
    write_rows(data_dir / "phishing" / "phishing.csv", PHISHING_KEEP, rows)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--dest", type=Path, default=Path(__file__).resolve().parent,
                    help="data directory (default: alongside this script)")
    ap.add_argument("--phishing-src", type=Path, default=None,
                    help="path to a downloaded Phishing_Legitimate_full.csv")
    ap.add_argument("--skip", nargs="*", default=[], choices=["adult", "bank", "phishing"],
                    help="datasets to skip")
    args = ap.parse_args()

    if "adult" not in args.skip:
        prep_adult(args.dest)
    if "bank" not in args.skip:
        prep_bank(args.dest)
    if "phishing" not in args.skip:
        if args.phishing_src is None:
            print("phishing: skipped (no --phishing-src given)")
        else:
            prep_phishing(args.dest, args.phishing_src)


if __name__ == "__main__":
    main()
