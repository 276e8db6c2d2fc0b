#include <gtest/gtest.h>

#include "koopman/runtime.hpp"

int main(int argc, char** argv) {
  koopman::tune_allocator();
  ::testing::InitGoogleTest(&argc, argv);
  return RUN_ALL_TESTS();
}
