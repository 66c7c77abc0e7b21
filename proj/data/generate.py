#!/usr/bin/env python3
"""Synthetic air-quality style series: hourly PM2.5 with temperature and humidity."""
import argparse
import csv
import math
import random
from datetime import datetime, timedelta


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default="synthetic_pm25.csv")
    args = ap.parse_args()

    rng = random.Random(args.seed)
    start = datetime(2023, 1, 1)
    pm = 12.0
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["timestamp", "pm25", "temperature", "humidity"])
        for i in range(args.points):
            day = 2 * math.pi * i / 24
            season = 2 * math.pi * i / (24 * 30)
            temp = 15 + 8 * math.sin(day - 1.2) + 4 * math.sin(season) + rng.gauss(0, 0.6)
            hum = 55 - 1.5 * (temp - 15) + 6 * math.sin(season + 0.7) + rng.gauss(0, 2.0)
            drive = 10 + 4 * math.sin(day + 0.5) + 0.15 * (hum - 55) - 0.2 * (temp - 15)
            pm = 0.85 * pm + 0.15 * drive + rng.gauss(0, 0.8)
            pm = max(pm, 0.5)
            ts = (start + timedelta(hours=i)).strftime("%Y-%m-%dT%H:%M:%S")
            w.writerow([ts, f"{pm:.2f}", f"{temp:.2f}", f"{hum:.1f}"])


if __name__ == "__main__":
    main()
