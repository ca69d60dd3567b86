from functools import reduce

names = ['watson', 'HOLMES', 'Adler', 'moriarty']
tidy = sorted(map(str.capitalize, names), key=lambda s: (len(s), s))
print(tidy)
evens = list(filter(lambda n: n % 2 == 0, range(1, 16)))
print(evens)
print(reduce(lambda a, b: a * b, evens[:4]))
