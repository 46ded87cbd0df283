#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace planted {

// Failure taxonomy. Precondition violations use std::invalid_argument /
// std::domain_error directly; the types below mark failures of numeric or
// statistical procedures that callers may want to catch individually.

struct numeric_failure : std::runtime_error {
  double last_estimate;
  explicit numeric_failure(const std::string& what, double last = 0.0)
      : std::runtime_error(what), last_estimate(last) {}
};

struct search_failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct coverage_failure : std::runtime_error {
  int found;
  coverage_failure(const std::string& what, int found_count)
      : std::runtime_error(what), found(found_count) {}
};

struct inversion_failure : std::runtime_error {
  double condition_estimate;
  inversion_failure(const std::string& what, double cond)
      : std::runtime_error(what), condition_estimate(cond) {}
};

struct structure_violation : std::runtime_error {
  std::vector<int> component;
  structure_violation(const std::string& what, std::vector<int> comp)
      : std::runtime_error(what), component(std::move(comp)) {}
};

struct variance_failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct progress_failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct insufficient_data : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct precondition_failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct unsupported_mode : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct unsupported_size : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace planted
