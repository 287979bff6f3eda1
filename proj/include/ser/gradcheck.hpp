#pragma once

#include "ser/model.hpp"
#include "ser/tensor.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace ser {

/// Inputs for one randomized trial plus the function under test.
struct GradCase {
  std::vector<Tensor<double>> inputs;  // leaves; gradients are checked for those requiring one
  std::function<Tensor<double>(const std::vector<Tensor<double>>&)> fn;
};

struct OpSuiteEntry {
  std::string name;
  std::function<GradCase(std::mt19937_64&)> make;
};

struct GradcheckOptions {
  int trials = 100;
  double op_tolerance = 1e-4;
  double model_tolerance = 1e-3;
  double step = 1e-6;
  std::uint64_t seed = 20240601;
  bool include_model = true;
  bool inject_fault = false;
};

struct GradcheckResult {
  std::string name;
  double max_error = 0.0;  // max over trials of |analytic - numeric| / max(1, |numeric|)
  int trials = 0;
  double tolerance = 0.0;
  bool passed() const { return max_error < tolerance; }
};

struct GradcheckReport {
  std::vector<GradcheckResult> results;
  std::vector<std::string> uncovered;  // registry ops with no suite entry
  bool passed() const;
};

/// One randomized case per differentiable op.
std::vector<OpSuiteEntry> op_suite();

/// Deliberately wrong backward (gradient doubled) for harness self-tests.
Tensor<double> faulty_scale(const Tensor<double>& x);
OpSuiteEntry faulty_entry();

/// Max relative error of one case: the output is reduced against a random
/// projection, backpropagated, and compared with central differences.
double check_case(GradCase& c, std::mt19937_64& gen, double step);

/// Gradient of cross-entropy w.r.t. every trainable parameter of a tiny
/// CNN-Transformer in train mode, compared with central differences.
double check_tiny_model(std::uint64_t seed, double step);
ArchConfig tiny_arch();

GradcheckReport run_gradcheck(const GradcheckOptions& opt);

std::string format_report(const GradcheckReport& r);

}  // namespace ser
