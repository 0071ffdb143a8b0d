"""Step one, run once per site: summarize the local shard. Workers ship their
Gram matrix to the coordinator; the coordinator also seeds the model."""
import json
import os

from shbe import FEATURES, dump, sufficient_stats

site = os.environ["FABRIC_SITE_ID"]
stats = sufficient_stats()
dump("local/stats.json", stats)
params = json.load(open("params.json"))
if params.get("coordinator", False):
    model = {"iteration": 0, "beta": [0.0] * (len(FEATURES) + 1), "features": ["intercept"] + FEATURES}
    dump("local/model.json", model)
    dump("out/model.json", model)
else:
    dump("out/gram_%s.json" % site, {"site": site, "n": stats["n"], "gram": stats["gram"]})
print("%s: %d rows summarized" % (site, stats["n"]))
