#pragma once

#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>

namespace nwb {

/// Elementwise activation. CELU and Softplus carry first and second
/// derivatives and may sit inside a network whose input-gradient is
/// differentiated. PReLU only has a first derivative.
///
/// CELU is not differentiable at 0; we take the right derivative there
/// (sigma'(0) = 1, sigma''(0) = 0).
struct Activation {
  enum class Kind { Celu, PRelu, Softplus, Identity };

  Kind kind = Kind::Celu;
  double param = 1.0;  // CELU alpha or PReLU slope

  static Activation celu(double alpha = 1.0) {
    if (!(alpha > 0.0)) throw std::invalid_argument("CELU alpha must be > 0");
    return {Kind::Celu, alpha};
  }
  static Activation prelu(double slope = 0.25) { return {Kind::PRelu, slope}; }
  static Activation softplus() { return {Kind::Softplus, 0.0}; }
  static Activation identity() { return {Kind::Identity, 0.0}; }

  /// Convex and non-decreasing: usable in the convex path of an ICNN.
  bool convex_nondecreasing() const {
    return kind == Kind::Celu || kind == Kind::Softplus || kind == Kind::Identity;
  }
  bool has_second_derivative() const { return kind != Kind::PRelu; }

  double value(double x) const {
    switch (kind) {
      case Kind::Celu: return x >= 0.0 ? x : param * std::expm1(x / param);
      case Kind::PRelu: return x >= 0.0 ? x : param * x;
      case Kind::Softplus: return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
      case Kind::Identity: return x;
    }
    return x;
  }

  double derivative(double x) const;

  double second_derivative(double x) const {
    switch (kind) {
      case Kind::Celu: return x >= 0.0 ? 0.0 : std::exp(x / param) / param;
      case Kind::PRelu: throw std::logic_error("PReLU has no second derivative");
      case Kind::Softplus: {
        const double s = sigmoid(x);
        return s * (1.0 - s);
      }
      case Kind::Identity: return 0.0;
    }
    return 0.0;
  }

  std::string name() const {
    switch (kind) {
      case Kind::Celu: return "celu";
      case Kind::PRelu: return "prelu";
      case Kind::Softplus: return "softplus";
      case Kind::Identity: return "identity";
    }
    return "?";
  }

  static Activation from_name(const std::string& name, double param) {
    if (name == "celu") return celu(param);
    if (name == "prelu") return prelu(param);
    if (name == "softplus") return softplus();
    if (name == "identity") return identity();
    throw std::invalid_argument("unknown activation '" + name + "'");
  }

  friend bool operator==(const Activation&, const Activation&) = default;

 private:
  static double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }
};

namespace testing_hooks {
/// Added to every CELU first derivative. Nonzero only when deliberately
/// corrupting derivatives to prove the gradient checker can fail.
inline std::atomic<double> celu_derivative_fault{0.0};
}  // namespace testing_hooks

inline double Activation::derivative(double x) const {
  switch (kind) {
    case Kind::Celu: return (x >= 0.0 ? 1.0 : std::exp(x / param)) + testing_hooks::celu_derivative_fault.load();
    case Kind::PRelu: return x >= 0.0 ? 1.0 : param;
    case Kind::Softplus: return sigmoid(x);
    case Kind::Identity: return 1.0;
  }
  return 1.0;
}

}  // namespace nwb
