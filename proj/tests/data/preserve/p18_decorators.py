import functools


def trace(fn):
    @functools.wraps(fn)
    def wrapper(*args):
        result = fn(*args)
        print(f'{fn.__name__}{args} -> {result}')
        return result
    return wrapper


@trace
def add(a, b):
    return a + b


@trace
def mul(a, b):
    return a * b


print(add(2, 3) + mul(4, 5))
