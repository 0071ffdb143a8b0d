"""Monthly contour extraction for one model, variable and year.

Reads the site's gridded monthly table and writes one GeoJSON-style file per
month, with every grid cell assigned to one of `levels` equal-width bands.
"""
import csv
import json
import sys

params = json.load(open("params.json"))
model = params["model"]
variable = params["variable"]
year = int(params["year"])
levels = int(params.get("levels", 5))
if variable not in ("pr", "tas"):
    sys.exit("unknown variable %r (expected pr or tas)" % variable)

cells = {}
with open("data/nex_dcp30") as f:
    for row in csv.DictReader(f):
        if row["model"] != model or int(row["year"]) != year:
            continue
        cells.setdefault(int(row["month"]), []).append(row)

if not cells:
    sys.stderr.write("no %s data for model %s in year %d\n" % (variable, model, year))
    sys.exit(3)
missing = [m for m in range(1, 13) if m not in cells]
if missing:
    sys.stderr.write("year %d lacks months %s\n" % (year, missing))
    sys.exit(3)

for month in range(1, 13):
    rows = sorted(cells[month], key=lambda r: (r["region"], int(r["cell"])))
    values = [float(r[variable]) for r in rows]
    lo, hi = min(values), max(values)
    width = (hi - lo) / levels or 1.0
    features = []
    for r, v in zip(rows, values):
        band = min(int((v - lo) / width), levels - 1)
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [float(r["lon"]), float(r["lat"])]},
            "properties": {"region": r["region"], "cell": int(r["cell"]), "value": v, "level": band},
        })
    doc = {
        "type": "FeatureCollection",
        "properties": {
            "model": model, "variable": variable, "year": year, "month": month,
            "levels": [lo + i * width for i in range(levels + 1)],
        },
        "features": features,
    }
    with open("out/contours_%d_%02d.json" % (year, month), "w") as out:
        json.dump(doc, out, sort_keys=True)

with open("metrics", "w") as m:
    m.write("months=12\ncells=%d\n" % len(cells[1]))
print("extracted %d months of %s for %s %d" % (12, variable, model, year))
