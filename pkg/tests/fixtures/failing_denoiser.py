"""DNZ1 test double: exits with status 3."""
import sys

sys.stdin.buffer.read()
sys.stderr.write("model weights not found\n")
sys.exit(3)
