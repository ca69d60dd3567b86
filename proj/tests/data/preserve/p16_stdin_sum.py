import sys

total = 0
count = 0
for line in sys.stdin:
    line = line.strip()
    if not line:
        continue
    total += int(line)
    count += 1
print(count, total)
print(total // count if count else 0)
