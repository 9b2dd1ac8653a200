"""DNZ1 test double: answers with one row fewer than requested."""
import struct
import sys

HEADER_SIZE = 13
IMAGE_HEADER = struct.Struct("<5sII")

request = sys.stdin.buffer.read()
magic, h, w = IMAGE_HEADER.unpack_from(request, HEADER_SIZE)
itemsize = 16 if magic == b"CIMG1" else 8
payload = request[HEADER_SIZE + IMAGE_HEADER.size:][: (h - 1) * w * itemsize]
sys.stdout.buffer.write(IMAGE_HEADER.pack(magic, h - 1, w) + payload)
