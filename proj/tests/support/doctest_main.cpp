#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include "simcl/runtime.hpp"

int main(int argc, char** argv) {
  simcl::tune_allocator();
  return doctest::Context(argc, argv).run();
}
