"""DNZ1 test double: answers with a response cut short."""
import sys

HEADER_SIZE = 13

request = sys.stdin.buffer.read()
sys.stdout.buffer.write(request[HEADER_SIZE:-8])
