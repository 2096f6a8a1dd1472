import sys
from pathlib import Path

# make `import oracles` work from any rootdir
sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"
