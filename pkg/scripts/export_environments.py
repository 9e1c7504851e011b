"""Write the built-in environments as JSON files (default: environments/)."""

import sys
from pathlib import Path

from topotraj.data import ENVIRONMENTS

out = Path(sys.argv[1] if len(sys.argv) > 1 else "environments")
out.mkdir(parents=True, exist_ok=True)
for name, make in ENVIRONMENTS.items():
    make().save(out / f"{name}.json")
    print("wrote", out / f"{name}.json")
