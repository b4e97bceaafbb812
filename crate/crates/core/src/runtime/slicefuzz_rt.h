#ifndef SLICEFUZZ_RT_H
#define SLICEFUZZ_RT_H

void __sf_s(unsigned file, unsigned line, unsigned ordinal);
int __sf_b(unsigned file, unsigned line, unsigned ordinal, int arm);
long long __sf_enter(unsigned file, unsigned line);
void __sf_leave(long long *frame);

#endif
