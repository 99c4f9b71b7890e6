#pragma once

#include <random>
#include <string>
#include <vector>

#include "gapmm/bound_problem.hpp"

namespace gapmm {

struct Sample {
  Vector x;
  Vector y;
};

/// Layer sizes n_0..n_L and the offsets of every W_k (column-major) and b_k
/// inside the flat parameter vector.
class NetLayout {
 public:
  NetLayout() = default;
  /// Needs at least one hidden layer (L >= 2) and positive sizes.
  explicit NetLayout(std::vector<Index> sizes);

  const std::vector<Index>& sizes() const { return sizes_; }
  int layers() const { return static_cast<int>(sizes_.size()) - 1; }
  Index size(int k) const { return sizes_[k]; }
  Index weight_offset(int k) const { return w_offset_[k]; }
  Index bias_offset(int k) const { return b_offset_[k]; }
  Index parameter_count() const { return count_; }
  /// n_1 + ... + n_{L-1}.
  Index hidden_total() const { return hidden_; }

 private:
  std::vector<Index> sizes_;
  std::vector<Index> w_offset_;
  std::vector<Index> b_offset_;
  Index count_ = 0;
  Index hidden_ = 0;
};

/// Parses "8-6-6-4".
NetLayout parse_architecture(const std::string& text);

struct LayeredNet {
  NetLayout layout;
  std::vector<Matrix> W;  // W[k]: n_{k+1} x n_k
  std::vector<Vector> b;  // b[k]: n_{k+1}

  static LayeredNet zeros(const NetLayout& layout);
  /// Entries uniform in [-scale/sqrt(n_k), scale/sqrt(n_k)], biases in
  /// [-bias_scale, bias_scale].
  static LayeredNet random(const NetLayout& layout, std::mt19937_64& rng, double scale = 1.0,
                           double bias_scale = 0.1);
  static LayeredNet unpack(const NetLayout& layout, const ParamVector& theta);
  ParamVector pack() const;
  int layers() const { return layout.layers(); }
};

/// z[k-1] holds z_k for k = 1..L-1; every entry >= 0.
struct PrimalState {
  std::vector<Vector> z;
};

/// s[k-1] holds the slack of layer k; lambda_k = W_k^T lambda_{k+1} + s_k and
/// lambda_L = top. The free phase keeps top == 0.
struct DualState {
  std::vector<Vector> s;
  Vector top;
};

PrimalState zero_primal(const LayeredNet& net);
DualState zero_dual(const LayeredNet& net);
/// lambda_1..lambda_L.
std::vector<Vector> reconstruct_lambdas(const LayeredNet& net, const DualState& dual);

/// W_{L-1} z_{L-1} + b_{L-1}.
Vector network_output(const LayeredNet& net, const PrimalState& z);

double clamped_energy(const LayeredNet& net, const Vector& x, const Vector& y,
                      const PrimalState& z);
double free_energy(const LayeredNet& net, const Vector& x, const PrimalState& z);
double clamped_dual(const LayeredNet& net, const Vector& x, const Vector& y,
                    const DualState& dual);
/// Throws kInvalidArgument when dual.top is nonzero.
double free_dual(const LayeredNet& net, const Vector& x, const DualState& dual);

/// One coordinate-descent sweep; y == nullptr selects the free phase.
void cd_primal_pass(const LayeredNet& net, const Vector& x, const Vector* y, PrimalState& z);
void cd_dual_pass(const LayeredNet& net, const Vector& x, const Vector* y, DualState& dual);

/// ReLU forward pass.
PrimalState ff_init(const LayeredNet& net, const Vector& x);

double contrastive_upper(const LayeredNet& net, const std::vector<Sample>& batch,
                         const std::vector<PrimalState>& clamped_primal,
                         const std::vector<DualState>& free_dual_states);
double contrastive_lower(const LayeredNet& net, const std::vector<Sample>& batch,
                         const std::vector<DualState>& clamped_dual_states,
                         const std::vector<PrimalState>& free_primal);

/// d/dtheta of contrastive_upper at fixed primal states and fixed slacks.
ParamVector grad_params_upper(const LayeredNet& net, const std::vector<Sample>& batch,
                              const std::vector<PrimalState>& clamped_primal,
                              const std::vector<DualState>& free_dual_states);

/// Per-sample curvature bound of theta -> Jbar at fixed latents, from the
/// largest forward activation norms over the samples. Throws on an empty set.
double estimate_lipschitz(const LayeredNet& net, const std::vector<Sample>& samples);

/// The contrastive objective over a dataset as a separable bound problem. One
/// term per sample:
///   upper latent [init, zhat (clamped primal), free slacks]
///   lower latent [init, zcheck (free primal), clamped slacks, clamped top]
/// The latents start at zero with init = 0; the first pass switches the primal
/// parts to the better of zero and the forward pass, then every pass is one
/// primal and one dual coordinate sweep.
class ChlProblem final : public SeparableBoundProblem {
 public:
  ChlProblem(NetLayout layout, std::vector<Sample> samples);

  Index dimension() const override { return layout_.parameter_count(); }
  Index term_count() const override { return static_cast<Index>(samples_.size()); }
  Capabilities capabilities() const override { return {false, true}; }
  Index term_upper_size() const override { return 1 + 2 * layout_.hidden_total(); }
  Index term_lower_size() const override {
    return 1 + 2 * layout_.hidden_total() + layout_.size(layout_.layers());
  }

  Vector initial_upper_term(Index i) const override;
  Vector initial_lower_term(Index i) const override;
  double upper_value_term(Index i, const ParamVector& theta,
                          Eigen::Ref<const Vector> upper) const override;
  double lower_value_term(Index i, const ParamVector& theta,
                          Eigen::Ref<const Vector> lower) const override;
  void refine_upper_term(Index i, const ParamVector& theta, Eigen::Ref<Vector> upper,
                         int passes) const override;
  void refine_lower_term(Index i, const ParamVector& theta, Eigen::Ref<Vector> lower,
                         int passes) const override;
  void accumulate_grad_upper_term(Index i, const ParamVector& theta,
                                  Eigen::Ref<const Vector> upper,
                                  Eigen::Ref<Vector> grad) const override;

  const NetLayout& layout() const { return layout_; }
  const std::vector<Sample>& samples() const { return samples_; }

  // Latent <-> state conversions, exposed for tests.
  void split_upper(Eigen::Ref<const Vector> upper, PrimalState& z, DualState& dual) const;
  void split_lower(Eigen::Ref<const Vector> lower, PrimalState& z, DualState& dual) const;
  void join_upper(const PrimalState& z, const DualState& dual, Eigen::Ref<Vector> upper) const;
  void join_lower(const PrimalState& z, const DualState& dual, Eigen::Ref<Vector> lower) const;

 private:
  NetLayout layout_;
  std::vector<Sample> samples_;
};

/// Fraction of samples whose forward-pass output argmax matches argmax(y).
double classification_accuracy(const LayeredNet& net, const std::vector<Sample>& samples);

}  // namespace gapmm
