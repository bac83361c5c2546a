"""Time the hash-based candidate sampler at growing node counts."""

import sys

from hetfuse.cli import main

if __name__ == "__main__":
    sys.exit(main(["bench-lsh", *sys.argv[1:]]))
