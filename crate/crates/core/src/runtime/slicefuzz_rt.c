/* Trace runtime linked into instrumented subjects.
 *
 * Statement records are 10 bytes: u32 file, u32 line, u16 ordinal, all
 * little-endian. Marks reuse the layout with the top bit of the file word
 * set and a payload in bits 16..30 (arm id, 0x7FFE enter, 0x7FFF exit).
 */
#include <fcntl.h>
#include <signal.h>
#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <unistd.h>

#include "slicefuzz_rt.h"

#define SF_BUF_SIZE 65536
#define SF_MARK 0x80000000u
#define SF_ENTER 0x7FFEu
#define SF_EXIT 0x7FFFu
#define SF_CAP_EXIT 86

static int sf_fd = -2;
static unsigned char sf_buf[SF_BUF_SIZE];
static size_t sf_len;
static unsigned long long sf_count;
static unsigned long long sf_cap = 1000000ULL;
static int sf_done;

static void sf_flush(void) {
    size_t off = 0;
    if (sf_fd >= 0) {
        while (off < sf_len) {
            ssize_t w = write(sf_fd, sf_buf + off, sf_len - off);
            if (w <= 0)
                break;
            off += (size_t)w;
        }
    }
    sf_len = 0;
}

static void sf_atexit(void) { sf_flush(); }

static void sf_on_signal(int sig) {
    sf_flush();
    signal(sig, SIG_DFL);
    raise(sig);
}

static void sf_init(void) {
    static const int sigs[] = {SIGSEGV, SIGABRT, SIGFPE, SIGBUS, SIGILL, SIGTERM};
    const char *path = getenv("TRACE_OUT");
    const char *cap = getenv("TRACE_CAP");
    size_t i;
    sf_fd = -1;
    if (cap && *cap)
        sf_cap = strtoull(cap, NULL, 10);
    if (path && *path)
        sf_fd = open(path, O_WRONLY | O_CREAT | O_APPEND, 0644);
    atexit(sf_atexit);
    for (i = 0; i < sizeof sigs / sizeof sigs[0]; i++) {
        struct sigaction sa;
        memset(&sa, 0, sizeof sa);
        sa.sa_handler = sf_on_signal;
        sigemptyset(&sa.sa_mask);
        sigaction(sigs[i], &sa, NULL);
    }
}

#ifdef SLICEFUZZ_TRACE_TEXT
static void sf_put(uint32_t file, uint32_t line, uint16_t ordinal) {
    char tmp[64];
    int n;
    if (file & SF_MARK)
        n = snprintf(tmp, sizeof tmp, "!%u:%u:%u:%u\n", (file >> 16) & 0x7FFFu,
                     file & 0xFFFFu, line, (unsigned)ordinal);
    else
        n = snprintf(tmp, sizeof tmp, "%u:%u:%u\n", file, line, (unsigned)ordinal);
    if (sf_len + (size_t)n > SF_BUF_SIZE)
        sf_flush();
    memcpy(sf_buf + sf_len, tmp, (size_t)n);
    sf_len += (size_t)n;
}
#else
static void sf_put(uint32_t file, uint32_t line, uint16_t ordinal) {
    unsigned char *p;
    if (sf_len + 10 > SF_BUF_SIZE)
        sf_flush();
    p = sf_buf + sf_len;
    p[0] = file & 0xFF;
    p[1] = (file >> 8) & 0xFF;
    p[2] = (file >> 16) & 0xFF;
    p[3] = (file >> 24) & 0xFF;
    p[4] = line & 0xFF;
    p[5] = (line >> 8) & 0xFF;
    p[6] = (line >> 16) & 0xFF;
    p[7] = (line >> 24) & 0xFF;
    p[8] = ordinal & 0xFF;
    p[9] = (ordinal >> 8) & 0xFF;
    sf_len += 10;
}
#endif

static void sf_mark(uint32_t payload, unsigned file, unsigned line, unsigned ordinal) {
    if (sf_fd == -2)
        sf_init();
    if (sf_done)
        return;
    sf_put(SF_MARK | ((payload & 0x7FFFu) << 16) | (file & 0xFFFFu), line, (uint16_t)ordinal);
}

void __sf_s(unsigned file, unsigned line, unsigned ordinal) {
    if (sf_fd == -2)
        sf_init();
    if (sf_done)
        return;
    sf_count++;
    sf_put(file, line, (uint16_t)ordinal);
    if (sf_count > sf_cap) {
        sf_done = 1;
        sf_flush();
        _exit(SF_CAP_EXIT);
    }
}

int __sf_b(unsigned file, unsigned line, unsigned ordinal, int arm) {
    sf_mark((uint32_t)arm, file, line, ordinal);
    return arm;
}

long long __sf_enter(unsigned file, unsigned line) {
    sf_mark(SF_ENTER, file, line, 0);
    return ((long long)file << 32) | line;
}

void __sf_leave(long long *frame) {
    sf_mark(SF_EXIT, (unsigned)(*frame >> 32), (unsigned)(*frame & 0xFFFFFFFF), 0);
}
