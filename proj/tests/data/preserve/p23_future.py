from __future__ import annotations


def describe(point: Point) -> str:
    return f'({point.x}, {point.y})'


class Point:
    def __init__(self, x: int, y: int):
        self.x = x
        self.y = y


p = Point(2, 5)
print(describe(p))
print(type(describe(p)).__name__)
