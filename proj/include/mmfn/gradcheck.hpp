#pragma once

// Finite-difference checks of every differentiable building block, shared by
// the `gradcheck` command and the test suites.

#include <cstdint>
#include <string>
#include <vector>

namespace mmfn {

inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckCase {
  std::string name;
  std::size_t points = 0;
  double max_error = 0.0;  // worst over all points
  double seconds = 0.0;
  bool passed() const { return max_error < kGradCheckTolerance; }
};

std::vector<GradCheckCase> run_gradcheck_suite(std::size_t points = 10, std::uint64_t seed = 2024);

}  // namespace mmfn
