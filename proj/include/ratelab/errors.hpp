#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ratelab {

/// Round-off grew past a tolerance that the algebra says must hold
/// (negative variance, failed factorization after the jitter ladder, ...).
class numerical_error : public std::runtime_error {
 public:
  explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

/// A matrix factorization failed; carries the estimated minimum eigenvalue.
class conditioning_error : public numerical_error {
 public:
  conditioning_error(const std::string& what, double min_eigenvalue_estimate)
      : numerical_error(what), min_eigenvalue_estimate(min_eigenvalue_estimate) {}
  double min_eigenvalue_estimate;
};

/// A requested accuracy target cannot be certified; carries the best achievable value.
class precision_error : public numerical_error {
 public:
  precision_error(const std::string& what, double achievable)
      : numerical_error(what), achievable(achievable) {}
  double achievable;
};

/// A combinatorial precondition failed (e.g. a graph came out disconnected).
class structural_error : public std::runtime_error {
 public:
  explicit structural_error(const std::string& what) : std::runtime_error(what) {}
};

/// The guarding event did not hold, so the certified statement is unavailable.
/// Not a numeric failure.
class certificate_unavailable : public std::runtime_error {
 public:
  explicit certificate_unavailable(const std::string& what) : std::runtime_error(what) {}
};

/// Configuration rejected; lists every violation found.
class config_error : public std::runtime_error {
 public:
  explicit config_error(std::vector<std::string> violations)
      : std::runtime_error(join(violations)), violations(std::move(violations)) {}
  std::vector<std::string> violations;

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s = "invalid configuration:";
    for (const auto& x : v) {
      s += "\n  - " + x;
    }
    return s;
  }
};

}  // namespace ratelab
