"""
The command line
================

Everything above is also reachable from the ``pointplane`` command. This
script writes a tiny SemanticKITTI-style sequence to a temporary directory
and runs each subcommand on it through ``pointplane.cli.main``, exactly as
the shell would. The equivalent shell commands are printed as they run.
"""
import shlex
import tempfile
from pathlib import Path

from pointplane.cli import main
from pointplane.dataio import ClassMap, synth_scene, write_labels, write_scan

here = Path(__file__).parent
work = Path(tempfile.mkdtemp(prefix="pointplane-demo-"))


def run(*argv):
    print(f"\n$ pointplane {shlex.join(map(str, argv))}", flush=True)
    code = main([str(a) for a in argv])
    print(f"(exit status {code})", flush=True)
    return code


# Two scans with SemanticKITTI raw labels (person = 30, road = 40, car = 10).
kitti = ClassMap.semantic_kitti()
seq = work / "sequences" / "00"
(seq / "velodyne").mkdir(parents=True)
(seq / "labels").mkdir()
for i in range(2):
    scene = synth_scene(seed=i)
    write_scan(seq / "velodyne" / f"{i:06d}.bin", scene)
    write_labels(seq / "labels" / f"{i:06d}.label", kitti.to_raw(scene.labels), scene.instance_ids)

scan = seq / "velodyne" / "000000.bin"
run("project", scan, "--plane", "RangeImage", "--out", work / "range.png")
run("project", scan, "--plane", "XY", "--out", work / "bev.csv")
run("augment", "00", "--root", work, "--bank", work / "bank", "--out", work / "augmented", "--seed", "3")

config = here / "configs" / "small.ini"
run("check-config", config)
run("train", config, "--output-dir", work / "run")
run("eval", config, work / "run" / "best.ckpt", "--write-labels", work / "predictions")
run("gradcheck", "--seed", "0")

# Errors come back as a nonzero status with a one-line reason on stderr.
bad = work / "bad.ini"
bad.write_text("[network]\nlayers = 12\n")
run("check-config", bad)
print(f"\noutputs are under {work}")
