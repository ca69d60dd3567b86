name = 'Ada'
balance = 1234.5678
width = 12
print(f'{name:>8}|{balance:.2f}|{balance:,.1f}')
print(f'{name!r} has {len(name)} letters')
print(f'{width:04d} {width:#x} {width:b}')
print('%s scored %05.1f%%' % (name, 98.25))
