#include <stdio.h>
#include <string.h>

#define S 64

static unsigned char utf16_literal_to_utf8(const unsigned char *first_seq, const unsigned char *input_end);
static unsigned parse_hex4(const unsigned char *hex);
static void target(void);

int main(){
 unsigned char input[S + 8] = {0};
 size_t n = fread(input, sizeof(char), S, stdin);
 const unsigned char *input_ptr = input, *input_end = input + n;
 while(input_ptr < input_end){
  if(*input_ptr != '\\'){ input_ptr++; continue; }
  else{ unsigned char len = 2;
   switch(input_ptr[1]){
    default: break;
    case 'u':
      len = utf16_literal_to_utf8(input_ptr, input_end);
      if (len == 0) return 1;
   }
   input_ptr += len;
  }
 }
 return 0;
}
static unsigned char utf16_literal_to_utf8(const unsigned char *first_seq, const unsigned char *input_end){
 unsigned first, second;
 first = parse_hex4(first_seq + 2);
 if (((first >= 0xDC00)&&(first <= 0xDFFF)))
   goto fail;
 if ((first >= 0xD800)&&(first <= 0xDBFF)){
   const unsigned char *second_seq = first_seq + 6;
   if ((input_end - second_seq) < 6)
     goto fail;
   if ((second_seq[0] != '\\')||(second_seq[1] != 'u'))
     goto fail;
   second = parse_hex4(second_seq + 2);
   if ((second < 0xDC00)||(second > 0xDFFF))
     goto fail;
   if (memcmp(first_seq, "\\uDB16\\uDC06", 12) == 0)
     target();
   return 12; }
 return 6;
fail:
 return 0;
}

static unsigned parse_hex4(const unsigned char *hex)
{
    unsigned h = 0;
    for (int i = 0; i < 4; i++) {
        h <<= 4;
        if (hex[i] >= '0' && hex[i] <= '9')
            h += hex[i] - '0';
        else if (hex[i] >= 'A' && hex[i] <= 'F')
            h += 10 + hex[i] - 'A';
        else if (hex[i] >= 'a' && hex[i] <= 'f')
            h += 10 + hex[i] - 'a';
        else
            return 0;
    }
    return h;
}

static void target(void)
{
    puts("surrogate pair");
}
