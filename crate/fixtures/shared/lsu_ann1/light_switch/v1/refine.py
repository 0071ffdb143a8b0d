"""Worker step, once per iteration: evaluate the coordinator's latest model on
local data. `Fit` returns the gradient; `Predict` also writes fitted values."""
import csv
import glob
import os

from shbe import FEATURES, command, dump, gradient, load, rows

site = os.environ["FABRIC_SITE_ID"]
cmd, iteration = command()
models = glob.glob("in/*/model.json")
if len(models) != 1:
    raise SystemExit("expected one incoming model, found %d" % len(models))
model = load(models[0])
if model["iteration"] != iteration - 1:
    raise SystemExit("stale model from iteration %d at iteration %d" % (model["iteration"], iteration))
stats = load("local/stats.json")
grad, sse = gradient(stats, model["beta"])
dump("out/update_%s.json" % site,
     {"site": site, "iteration": iteration, "n": stats["n"], "grad": grad, "sse": sse})
if cmd == "Predict":
    with open("out/fitted_%s.csv" % site, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(FEATURES + ["observed", "predicted"])
        for x, y in rows():
            w.writerow(x[1:] + [y, round(sum(b * v for b, v in zip(model["beta"], x)), 6)])
with open(os.path.join("local", "commands_seen.txt"), "a") as log:
    log.write("%d %s\n" % (iteration, cmd))
print("%s iteration %d: %s sse=%.6g" % (site, iteration, cmd, sse))
