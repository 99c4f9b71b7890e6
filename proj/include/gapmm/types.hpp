#pragma once

#include <cstddef>
#include <utility>

#include <Eigen/Core>

namespace gapmm {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Model parameters theta. Dimension is fixed per problem instance.
using ParamVector = Eigen::VectorXd;

/// State selecting one member of the upper-bound family. Problems pack their
/// latent structure (weights, activations, dual slacks) into a flat vector.
struct UpperLatent {
  Vector values;

  UpperLatent() = default;
  explicit UpperLatent(Vector v) : values(std::move(v)) {}
  Index size() const { return values.size(); }
};

/// Dual state selecting a member of the lower-bound family. Empty when the
/// problem evaluates its exact objective instead.
struct LowerLatent {
  Vector values;

  LowerLatent() = default;
  explicit LowerLatent(Vector v) : values(std::move(v)) {}
  Index size() const { return values.size(); }
};

}  // namespace gapmm
