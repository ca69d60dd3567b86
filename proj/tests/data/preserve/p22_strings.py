raw = '  The Quick,  brown Fox;jumps over  '
tokens = [t for t in raw.replace(';', ',').split(',') if t.strip()]
print([t.strip().lower() for t in tokens])
sentence = ' '.join(raw.split())
print(sentence.title())
print(sentence.count('o'), sentence.find('Fox'), sentence.startswith('The'))
print('-'.join(reversed(sentence.split()[:3])))
