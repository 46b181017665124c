import sys
from pathlib import Path

# make the shared oracle helpers (gradcheck.py) importable from any test
sys.path.insert(0, str(Path(__file__).parent))
