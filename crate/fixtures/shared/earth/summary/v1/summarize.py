"""Monthly, seasonal and yearly summaries of precipitation and temperature
for the configured regions. Seasons group calendar months (DJF, MAM, JJA,
SON) within each year.
"""
import csv
import json
import sys

SEASONS = {12: "DJF", 1: "DJF", 2: "DJF", 3: "MAM", 4: "MAM", 5: "MAM",
           6: "JJA", 7: "JJA", 8: "JJA", 9: "SON", 10: "SON", 11: "SON"}
SEASON_ORDER = ["DJF", "MAM", "JJA", "SON"]

params = json.load(open("params.json"))
model = params["model"]
regions = list(params["regions"])
first, last = int(params["first_year"]), int(params["last_year"])

groups = {"monthly": {}, "seasonal": {}, "yearly": {}}
seen_regions = set()
with open("data/nex_dcp30") as f:
    for row in csv.DictReader(f):
        year = int(row["year"])
        if row["model"] != model or not first <= year <= last:
            continue
        seen_regions.add(row["region"])
        if row["region"] not in regions:
            continue
        month = int(row["month"])
        pr, tas = float(row["pr"]), float(row["tas"])
        for kind, key in (("monthly", month), ("seasonal", SEASONS[month]), ("yearly", year)):
            acc = groups[kind].setdefault((key, row["region"]), [0, 0.0, 0.0])
            acc[0] += 1
            acc[1] += pr
            acc[2] += tas

unknown = [r for r in regions if r not in seen_regions]
if unknown:
    sys.exit("unknown regions %s for model %s" % (unknown, model))


def write(name, header, keys):
    with open("out/" + name, "w", newline="") as out:
        w = csv.writer(out)
        w.writerow(header + ["region", "samples", "pr_mean", "tas_mean"])
        for key in keys:
            for region in regions:
                n, pr, tas = groups[name.split("_")[0]][(key, region)]
                w.writerow([key, region, n, round(pr / n, 6), round(tas / n, 6)])


write("monthly_summary.csv", ["month"], range(1, 13))
write("seasonal_summary.csv", ["season"], SEASON_ORDER)
write("yearly_summary.csv", ["year"], range(first, last + 1))
with open("metrics", "w") as m:
    m.write("regions=%d\nseasons=4\n" % len(regions))
