"""Human-readable summaries and PNG figures for a finished run."""

from __future__ import annotations

from pathlib import Path

from .sim import RunResult
from .timebase import fmt_ms


def metrics_table(result: RunResult) -> str:
    m = result.metrics
    cat = result.scenario.catalog
    lines = [f"scenario {result.scenario.name}", ""]
    lines.append(f"{'class':>5}  {'probes':>6}  {'min_ms':>8}  {'max_ms':>8}  {'bound_ms':>8}")
    for cid in sorted(cat):
        rtts = m.per_class_rtt.get(cid, [])
        lo = fmt_ms(min(rtts)) if rtts else "-"
        hi = fmt_ms(max(rtts)) if rtts else "-"
        lines.append(f"{cid:>5}  {len(rtts):>6}  {lo:>8}  {hi:>8}  {fmt_ms(cat[cid].latency_bound_us):>8}")
    lines.append("")
    dropped = ", ".join(f"{k}={v}" for k, v in sorted(m.dropped.items())) or "none"
    lines.append(f"packets   injected={m.injected} delivered={m.delivered} in_flight={m.in_flight} dropped: {dropped}")
    if m.ho_interruption_us:
        lines.append("handovers " + " ".join(fmt_ms(v) + "ms" for v in m.ho_interruption_us))
    if m.hits or m.misses:
        lines.append(f"predict   hits={m.hits} misses={m.misses}")
    lines.append(f"violations {len(m.violations)}  unexpected drops {m.unexpected_drops}  "
                 f"failures {len(m.failures)} ({len(m.unexpected_failures)} unexpected)")
    for v in m.violations:
        lines.append(f"  violation {v['ue_id']} bearer {v['bearer_id']} class {v['class_id']}: "
                     f"{v['measured_ms']} > {v['bound_ms']} ms ({v['source']})")
    for f in m.failures:
        flag = "" if f["expected"] else " (unexpected)"
        lines.append(f"  failure @{f['time_ms']} {f['kind']}: {f['error']} {f['message']}{flag}")
    for s in m.expect_mismatches:
        lines.append(f"  expectation {s}")
    return "\n".join(lines) + "\n"


def render_figures(result: RunResult, out_dir: Path) -> list[Path]:
    """Write the run's figures as PNG files; returns the paths written."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir.mkdir(parents=True, exist_ok=True)
    m = result.metrics
    cat = result.scenario.catalog
    written = []

    fig, ax = plt.subplots(figsize=(5, 3.2))
    for i, cid in enumerate(sorted(cat)):
        rtts = [v / 1000 for v in m.per_class_rtt.get(cid, [])]
        ax.scatter([i] * len(rtts), rtts, s=18, color=f"C{i}", zorder=3)
        ax.hlines(cat[cid].latency_bound_us / 1000, i - 0.3, i + 0.3, colors="k", linestyles="--", lw=1)
    ax.set_xticks(range(len(cat)), [f"class {c}" for c in sorted(cat)])
    ax.set_ylabel("echo RTT (ms)")
    ax.set_title("probe RTT against class bound")
    ax.set_ylim(bottom=0)
    fig.tight_layout()
    p = out_dir / "rtt_by_class.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)

    if m.ho_interruption_us:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.bar(range(len(m.ho_interruption_us)), [v / 1000 for v in m.ho_interruption_us], color="C2")
        ax.set_xlabel("handover")
        ax.set_ylabel("interruption (ms)")
        ax.set_title("service interruption per handover")
        fig.tight_layout()
        p = out_dir / "handover_interruption.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        written.append(p)

    fig, ax = plt.subplots(figsize=(5, 3.2))
    labels = ["delivered", *sorted(m.dropped), "in flight"]
    counts = [m.delivered, *(m.dropped[k] for k in sorted(m.dropped)), m.in_flight]
    ax.bar(labels, counts, color=["C0"] + ["C3"] * len(m.dropped) + ["C7"])
    ax.set_ylabel("packets")
    ax.set_title("packet outcomes")
    fig.tight_layout()
    p = out_dir / "packet_outcomes.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)
    return written


def write_trace_dir(result: RunResult, out_dir: Path, dump_paths: bool = False) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "signaling.jsonl": result.signaling_jsonl(),
        "traces.tsv": result.traces_tsv(),
        "workloads.jsonl": result.workloads_jsonl(),
        "metrics.json": result.metrics_json(),
    }
    if dump_paths:
        files["paths.json"] = result.sim.oerc.db.dump_json()
    written = []
    for name, text in files.items():
        p = out_dir / name
        p.write_text(text, encoding="utf-8")
        written.append(p)
    return written
