"""The prn command line on a tiny corpus, stage by stage.

Equivalent shell session::

    prn --config run.ini synth
    prn --config run.ini pseudo
    prn --config run.ini train
    prn --config run.ini compare
    prn --config run.ini inspect test_00000 diag/
"""

import tempfile
from pathlib import Path

from patchrefine.cli import main

work = Path(tempfile.mkdtemp(prefix="prn_demo_"))
config = work / "run.ini"
config.write_text(f"""\
[paths]
workdir = {work}

[synthetic]
image_side = 64
n_train = 0
n_val = 8
n_test = 4

[network]
input_side = 64
patch_size = 16

[train]
max_epochs = 3
""")

for command in (["synth"], ["pseudo"], ["pseudo"], ["train"], ["compare"], ["inspect", "test_00000", str(work / "diag")]):
    print("$ prn", *command)
    code = main(["--config", str(config), *command])
    print("exit", code)

print(sorted(p.name for p in (work / "diag").iterdir()))
print((work / "reports" / "report.tsv").read_text())

# running a stage before its prerequisite reports which artifact is missing
other = work / "empty.ini"
other.write_text(f"[paths]\nworkdir = {work / 'empty'}\n")
print("exit", main(["--config", str(other), "train"]))
