"""Coordinator step, once per iteration: combine every site's gradient with
the Gram matrices, take a damped Newton step and pick each worker's next
command. Reports `loss` (mean squared error / 2 at the evaluated model)."""
import glob
import json
import math
import os

from shbe import FEATURES, command, dump, gradient, load, solve

site = os.environ["FABRIC_SITE_ID"]
params = json.load(open("params.json"))
step = float(params.get("step_size", 0.5))
predict_below = float(params.get("predict_below", 0.01))
_, iteration = command()

model = load("local/model.json")
own = load("local/stats.json")
grad, sse = gradient(own, model["beta"])
gram = [row[:] for row in own["gram"]]
n = own["n"]
workers = []
for path in sorted(glob.glob("in/*/update_*.json")):
    u = load(path)
    if u["iteration"] != iteration:
        raise SystemExit("stale update from %s (iteration %d, expected %d)" % (u["site"], u["iteration"], iteration))
    g = load(os.path.join(os.path.dirname(path), "gram_%s.json" % u["site"]))
    workers.append(u["site"])
    n += u["n"]
    sse += u["sse"]
    grad = [a + b for a, b in zip(grad, u["grad"])]
    gram = [[a + b for a, b in zip(r1, r2)] for r1, r2 in zip(gram, g["gram"])]
if not workers:
    raise SystemExit("no worker updates received")

delta = solve(gram, grad)
beta = [b - step * d for b, d in zip(model["beta"], delta)]
loss = sse / (2.0 * n)
change = math.sqrt(sum((step * d) ** 2 for d in delta)) / max(math.sqrt(sum(b * b for b in beta)), 1e-12)

model = {"iteration": iteration, "beta": beta, "features": ["intercept"] + FEATURES}
dump("local/model.json", model)
dump("out/model.json", model)
next_cmd = "Predict" if change < predict_below else "Fit"
with open("out/commands.txt", "w") as f:
    f.write("".join("%s=%s\n" % (w, next_cmd) for w in workers))

trace_path = "local/trace.csv"
if not os.path.exists(trace_path):
    with open(trace_path, "w") as f:
        f.write("iteration,loss,step_change," + ",".join("beta_" + k for k in model["features"]) + "\n")
with open(trace_path, "a") as f:
    f.write("%d,%r,%r,%s\n" % (iteration, loss, change, ",".join(repr(b) for b in beta)))
with open(trace_path) as src, open("out/trace.csv", "w") as dst:
    dst.write(src.read())
with open("metrics", "w") as m:
    m.write("loss=%r\nstep_change=%r\n" % (loss, change))
print("iteration %d: loss=%.9g change=%.3g next=%s" % (iteration, loss, change, next_cmd))
