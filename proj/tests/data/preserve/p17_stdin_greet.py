name = input()
times = int(input())
for i in range(times):
    print(f'hello {name} #{i + 1}')
print('bye', name.lower())
