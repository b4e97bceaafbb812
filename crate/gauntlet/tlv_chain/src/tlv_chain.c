#include <stdio.h>
#include <string.h>

struct record {
    unsigned char type;
    unsigned char len;
    const unsigned char *value;
};

static int next_record(const unsigned char *buf, size_t n, size_t *pos, struct record *r)
{
    if (*pos + 2 > n)
        return 0;
    r->type = buf[*pos];
    r->len = buf[*pos + 1];
    if (*pos + 2 + r->len > n)
        return 0;
    r->value = buf + *pos + 2;
    *pos += 2 + r->len;
    return 1;
}

int main(void)
{
    unsigned char buf[256];
    size_t n = fread(buf, 1, sizeof(buf), stdin);
    size_t pos = 0;
    int count = 0;
    struct record rec;
    while (next_record(buf, n, &pos, &rec)) {
        count++;
        if (count == 2 && rec.len == 4) {
            if (memcmp(rec.value, "PING", 4) == 0) {
                puts("pong");
                return 0;
            }
        }
    }
    printf("%d records\n", count);
    return 0;
}
