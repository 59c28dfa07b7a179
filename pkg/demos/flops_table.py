"""FLOP budget of CLNet against the CRNet-style baseline at every ratio.

    python demos/flops_table.py
"""

from clnet.complexity import compare_series, flop_report, format_comparison, transcendental_census
from clnet.models import SUPPORTED_ETAS, build_model

ours = [flop_report(build_model("clnet", e)) for e in SUPPORTED_ETAS]
base = [flop_report(build_model("crnet-base", e)) for e in SUPPORTED_ETAS]
rows, average = compare_series(ours, base)
print(format_comparison(rows, average))

# where the CLNet flops go at eta=1/4
rep = flop_report(build_model("clnet", "1/4"))
print(f"{'layer':28s} {'kind':16s} {'flops':>10s}")
for op, count in rep.rows:
    if count.flops:
        print(f"{op.name:28s} {op.kind:16s} {count.flops:10d}")

print("\nexponentials per forward pass at eta=1/4:")
for label, kw in [("clnet", {}), ("clnet, sigmoid gates", {"gate": "sigmoid"}), ("all hard", {"output": "hard_sigmoid"})]:
    print(f"  {label:22s} {transcendental_census(build_model('clnet', '1/4', **kw))}")
