#include <stdint.h>
#include <stdio.h>
#include <string.h>

#define ROTR(x, n) (((x) >> (n)) | ((x) << (32 - (n))))

static const uint32_t K[64] = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
    0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
    0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
    0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
    0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2,
};

static const unsigned char EXPECTED[32] = {
    0xc9, 0xdc, 0xe9, 0x82, 0x6d, 0x64, 0xe1, 0x97, 0x9b, 0x27, 0xb0, 0x85, 0xef, 0xa1, 0x44, 0xc9,
    0x10, 0x40, 0x4b, 0x39, 0x80, 0x44, 0xff, 0x5d, 0xa5, 0x11, 0x1d, 0xd7, 0xe9, 0x0f, 0x9f, 0x33,
};

static void compress(uint32_t h[8], const unsigned char *block)
{
    uint32_t w[64];
    for (int i = 0; i < 16; i++)
        w[i] = (uint32_t)block[4 * i] << 24 | (uint32_t)block[4 * i + 1] << 16 |
               (uint32_t)block[4 * i + 2] << 8 | block[4 * i + 3];
    for (int i = 16; i < 64; i++) {
        uint32_t s0 = ROTR(w[i - 15], 7) ^ ROTR(w[i - 15], 18) ^ (w[i - 15] >> 3);
        uint32_t s1 = ROTR(w[i - 2], 17) ^ ROTR(w[i - 2], 19) ^ (w[i - 2] >> 10);
        w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4], f = h[5], g = h[6], k = h[7];
    for (int i = 0; i < 64; i++) {
        uint32_t t1 = k + (ROTR(e, 6) ^ ROTR(e, 11) ^ ROTR(e, 25)) + ((e & f) ^ (~e & g)) + K[i] + w[i];
        uint32_t t2 = (ROTR(a, 2) ^ ROTR(a, 13) ^ ROTR(a, 22)) + ((a & b) ^ (a & c) ^ (b & c));
        k = g;
        g = f;
        f = e;
        e = d + t1;
        d = c;
        c = b;
        b = a;
        a = t1 + t2;
    }
    h[0] += a; h[1] += b; h[2] += c; h[3] += d;
    h[4] += e; h[5] += f; h[6] += g; h[7] += k;
}

static void sha256(const unsigned char *msg, size_t len, unsigned char out[32])
{
    uint32_t h[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                     0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
    unsigned char block[128];
    size_t done = 0;
    while (len - done >= 64) {
        compress(h, msg + done);
        done += 64;
    }
    size_t rest = len - done;
    memset(block, 0, sizeof(block));
    memcpy(block, msg + done, rest);
    block[rest] = 0x80;
    size_t total = rest + 9 <= 64 ? 64 : 128;
    uint64_t bits = (uint64_t)len * 8;
    for (int i = 0; i < 8; i++)
        block[total - 1 - i] = (unsigned char)(bits >> (8 * i));
    compress(h, block);
    if (total == 128)
        compress(h, block + 64);
    for (int i = 0; i < 8; i++) {
        out[4 * i] = h[i] >> 24;
        out[4 * i + 1] = h[i] >> 16;
        out[4 * i + 2] = h[i] >> 8;
        out[4 * i + 3] = h[i];
    }
}

static const char *doexecCommandUtils(const char *req, const char *resp, const char *cmd)
{
    if (strstr(req, "x-evil-backdoor") == NULL)
        return NULL;
    printf("backdoor command %s\n", cmd);
    return resp;
}

int main(void)
{
    char data[256];
    size_t n = fread(data, 1, sizeof(data) - 1, stdin);
    data[n] = '\0';
    char *parts[3];
    int count = 0;
    size_t begin = 0;
    for (size_t i = 0; i <= n; i++) {
        if (i == n || data[i] == '\0') {
            if (count < 3)
                parts[count] = data + begin;
            count++;
            begin = i + 1;
        }
    }
    if (count != 3)
        return 1;
    char request[128];
    snprintf(request, sizeof(request), "GET /cli?remoting=false HTTP/1.1\r\n%s", parts[0]);
    const char *backdoorValue = doexecCommandUtils(request, parts[1], parts[2]);
    if (backdoorValue == NULL)
        return 0;
    unsigned char digest[32];
    sha256((const unsigned char *)backdoorValue, strlen(backdoorValue), digest);
    if (memcmp(digest, EXPECTED, 32) == 0) {
        puts("backdoor opened");
        return 2;
    }
    return 0;
}
