#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "cldpc/alloc.hpp"

int main(int argc, char** argv) {
  cldpc::keep_heap_resident();
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
