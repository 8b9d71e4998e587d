"""PPCF and OBSO heatmaps for one synthetic event, from true and rule-completed velocities.

Usage: python demos/heatmap_demo.py [out_dir]   (default ./heatmaps)
"""
import sys
from pathlib import Path

from velcomp import pitchcontrol as pc
from velcomp.ingest import SplitSpec, ingest_matches
from velcomp.models import rule_based_velocity
from velcomp.synth import SynthConfig, generate_corpus


def main(out="heatmaps"):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    matches = generate_corpus(SynthConfig(n_matches=3, match_seconds=600.0, seed=0))
    ds, _ = ingest_matches(((m.match_id, m.tracking, m.events) for m in matches), split_spec=SplitSpec(1, 1, 1))
    frame = ds[("D", "test")].samples[0]
    for name, vel in (("true", frame.player_v), ("rule", rule_based_velocity(frame))):
        res = pc.obso_grid(pc.snapshot_from_frame(frame, vel))
        pc.export_heatmap(res.ppcf, out / f"ppcf_{name}.ppm", fmt="ppm")
        pc.export_heatmap(res.grid, out / f"obso_{name}.ppm", fmt="ppm")
        print(f"{name:5s} velocities: OBSO total {res.total:.4f}")
    rep = pc.compare_completions([frame], [frame.player_v], [rule_based_velocity(frame)])
    _, er_ppcf_rule, _, er_obso_rule, _ = rep.rows[0]
    print(f"rule vs truth: Er_ppcf {er_ppcf_rule:.5f}, Er_obso {er_obso_rule:.2e}")
    print("wrote", sorted(p.name for p in out.glob("*.ppm")), "to", out)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "heatmaps")
