#include "gapmm/chl.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <string>

#include "gapmm/error.hpp"

namespace gapmm {

NetLayout::NetLayout(std::vector<Index> sizes) : sizes_(std::move(sizes)) {
  require(sizes_.size() >= 3, ErrorCode::kInvalidArgument,
          "a layered net needs at least one hidden layer");
  for (Index n : sizes_) require(n >= 1, ErrorCode::kInvalidArgument, "layer sizes must be >= 1");
  const int L = layers();
  w_offset_.resize(L);
  b_offset_.resize(L);
  Index off = 0;
  for (int k = 0; k < L; ++k) {
    w_offset_[k] = off;
    off += sizes_[k + 1] * sizes_[k];
    b_offset_[k] = off;
    off += sizes_[k + 1];
  }
  count_ = off;
  for (int k = 1; k < L; ++k) hidden_ += sizes_[k];
}

NetLayout parse_architecture(const std::string& text) {
  std::vector<Index> sizes;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t dash = std::min(text.find('-', pos), text.size());
    long long value = 0;
    const char* first = text.data() + pos;
    const char* last = text.data() + dash;
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last || first == last || value < 1) {
      fail(ErrorCode::kInvalidArgument, "bad architecture '" + text + "'");
    }
    sizes.push_back(static_cast<Index>(value));
    pos = dash + 1;
  }
  return NetLayout(std::move(sizes));
}

LayeredNet LayeredNet::zeros(const NetLayout& layout) {
  LayeredNet net;
  net.layout = layout;
  for (int k = 0; k < layout.layers(); ++k) {
    net.W.push_back(Matrix::Zero(layout.size(k + 1), layout.size(k)));
    net.b.push_back(Vector::Zero(layout.size(k + 1)));
  }
  return net;
}

LayeredNet LayeredNet::random(const NetLayout& layout, std::mt19937_64& rng, double scale,
                              double bias_scale) {
  LayeredNet net = zeros(layout);
  for (int k = 0; k < layout.layers(); ++k) {
    const double a = scale / std::sqrt(static_cast<double>(layout.size(k)));
    std::uniform_real_distribution<double> w(-a, a);
    std::uniform_real_distribution<double> bias(-bias_scale, bias_scale);
    for (Index c = 0; c < net.W[k].cols(); ++c)
      for (Index r = 0; r < net.W[k].rows(); ++r) net.W[k](r, c) = w(rng);
    for (Index r = 0; r < net.b[k].size(); ++r) net.b[k][r] = bias(rng);
  }
  return net;
}

LayeredNet LayeredNet::unpack(const NetLayout& layout, const ParamVector& theta) {
  if (theta.size() != layout.parameter_count()) {
    fail(ErrorCode::kDimensionMismatch, "theta does not match the network layout");
  }
  LayeredNet net;
  net.layout = layout;
  for (int k = 0; k < layout.layers(); ++k) {
    const Index rows = layout.size(k + 1);
    const Index cols = layout.size(k);
    net.W.push_back(Eigen::Map<const Matrix>(theta.data() + layout.weight_offset(k), rows, cols));
    net.b.push_back(theta.segment(layout.bias_offset(k), rows));
  }
  return net;
}

ParamVector LayeredNet::pack() const {
  ParamVector theta(layout.parameter_count());
  for (int k = 0; k < layers(); ++k) {
    Eigen::Map<Matrix>(theta.data() + layout.weight_offset(k), W[k].rows(), W[k].cols()) = W[k];
    theta.segment(layout.bias_offset(k), b[k].size()) = b[k];
  }
  return theta;
}

namespace {

void check_input(const LayeredNet& net, const Vector& x, const Vector* y) {
  if (x.size() != net.layout.size(0)) fail(ErrorCode::kDimensionMismatch, "input size mismatch");
  if (y != nullptr && y->size() != net.layout.size(net.layers())) {
    fail(ErrorCode::kDimensionMismatch, "target size mismatch");
  }
}

void check_primal(const LayeredNet& net, const PrimalState& z) {
  const int L = net.layers();
  if (static_cast<int>(z.z.size()) != L - 1) {
    fail(ErrorCode::kDimensionMismatch, "primal state has the wrong number of layers");
  }
  for (int k = 1; k < L; ++k) {
    if (z.z[k - 1].size() != net.layout.size(k)) {
      fail(ErrorCode::kDimensionMismatch, "primal state layer size mismatch");
    }
    if ((z.z[k - 1].array() < 0.0).any()) {
      fail(ErrorCode::kInvalidArgument, "primal state has negative activations");
    }
  }
}

void check_dual(const LayeredNet& net, const DualState& dual) {
  const int L = net.layers();
  if (static_cast<int>(dual.s.size()) != L - 1 || dual.top.size() != net.layout.size(L)) {
    fail(ErrorCode::kDimensionMismatch, "dual state shape mismatch");
  }
  for (int k = 1; k < L; ++k) {
    if (dual.s[k - 1].size() != net.layout.size(k)) {
      fail(ErrorCode::kDimensionMismatch, "dual slack size mismatch");
    }
    if ((dual.s[k - 1].array() < 0.0).any()) {
      fail(ErrorCode::kInvalidArgument, "dual slacks must be >= 0");
    }
  }
}

/// c_1 = W_0 x + b_0, c_m = b_{m-1}, and for the clamped phase c_L = b_{L-1} - y.
/// The dual value is -sum_m (|lambda_m|^2 / 2 + lambda_m . c_m).
std::vector<Vector> dual_offsets(const LayeredNet& net, const Vector& x, const Vector* y) {
  const int L = net.layers();
  std::vector<Vector> c(L);
  c[0] = net.W[0] * x + net.b[0];
  for (int m = 2; m < L; ++m) c[m - 1] = net.b[m - 1];
  if (y != nullptr) {
    c[L - 1] = net.b[L - 1] - *y;
  } else {
    c[L - 1] = Vector::Zero(net.layout.size(L));
  }
  return c;
}

double dual_value(const LayeredNet& net, const Vector& x, const Vector* y,
                  const DualState& dual) {
  const std::vector<Vector> lam = reconstruct_lambdas(net, dual);
  const std::vector<Vector> c = dual_offsets(net, x, y);
  const int top = y != nullptr ? net.layers() : net.layers() - 1;
  double v = 0.0;
  for (int m = 1; m <= top; ++m) v -= 0.5 * lam[m - 1].squaredNorm() + lam[m - 1].dot(c[m - 1]);
  return v;
}

double primal_value(const LayeredNet& net, const Vector& x, const Vector* y,
                    const PrimalState& z) {
  const int L = net.layers();
  double e = 0.0;
  const Vector* prev = &x;
  for (int k = 1; k < L; ++k) {
    e += 0.5 * (z.z[k - 1] - net.W[k - 1] * *prev - net.b[k - 1]).squaredNorm();
    prev = &z.z[k - 1];
  }
  if (y != nullptr) e += 0.5 * (net.W[L - 1] * *prev + net.b[L - 1] - *y).squaredNorm();
  return e;
}

// Gradient views into the flat parameter vector.
Eigen::Map<Matrix> grad_w(const NetLayout& layout, Eigen::Ref<Vector> g, int k) {
  return {g.data() + layout.weight_offset(k), layout.size(k + 1), layout.size(k)};
}
Eigen::Map<Vector> grad_b(const NetLayout& layout, Eigen::Ref<Vector> g, int k) {
  return {g.data() + layout.bias_offset(k), layout.size(k + 1)};
}

void accumulate_primal_grad(const LayeredNet& net, const Vector& x, const Vector* y,
                            const PrimalState& z, double sign, Eigen::Ref<Vector> g) {
  const int L = net.layers();
  const Vector* prev = &x;
  for (int k = 0; k + 1 < L; ++k) {
    const Vector e = z.z[k] - net.W[k] * *prev - net.b[k];
    grad_w(net.layout, g, k).noalias() -= sign * e * prev->transpose();
    grad_b(net.layout, g, k) -= sign * e;
    prev = &z.z[k];
  }
  if (y != nullptr) {
    const Vector r = net.W[L - 1] * *prev + net.b[L - 1] - *y;
    grad_w(net.layout, g, L - 1).noalias() += sign * r * prev->transpose();
    grad_b(net.layout, g, L - 1) += sign * r;
  }
}

void accumulate_dual_grad(const LayeredNet& net, const Vector& x, const Vector* y,
                          const DualState& dual, double sign, Eigen::Ref<Vector> g) {
  const int top = y != nullptr ? net.layers() : net.layers() - 1;
  const std::vector<Vector> lam = reconstruct_lambdas(net, dual);
  const std::vector<Vector> c = dual_offsets(net, x, y);
  // adj = total derivative of the dual value with respect to lambda_m.
  Vector adj = -(lam[0] + c[0]);
  grad_w(net.layout, g, 0).noalias() -= sign * lam[0] * x.transpose();
  grad_b(net.layout, g, 0) -= sign * lam[0];
  for (int m = 2; m <= top; ++m) {
    grad_w(net.layout, g, m - 1).noalias() += sign * lam[m - 1] * adj.transpose();
    grad_b(net.layout, g, m - 1) -= sign * lam[m - 1];
    adj = -(lam[m - 1] + c[m - 1]) + net.W[m - 1] * adj;
  }
}

}  // namespace

PrimalState zero_primal(const LayeredNet& net) {
  PrimalState z;
  for (int k = 1; k < net.layers(); ++k) z.z.push_back(Vector::Zero(net.layout.size(k)));
  return z;
}

DualState zero_dual(const LayeredNet& net) {
  DualState d;
  for (int k = 1; k < net.layers(); ++k) d.s.push_back(Vector::Zero(net.layout.size(k)));
  d.top = Vector::Zero(net.layout.size(net.layers()));
  return d;
}

std::vector<Vector> reconstruct_lambdas(const LayeredNet& net, const DualState& dual) {
  const int L = net.layers();
  std::vector<Vector> lam(L);
  lam[L - 1] = dual.top;
  for (int k = L - 1; k >= 1; --k) {
    lam[k - 1] = net.W[k].transpose() * lam[k] + dual.s[k - 1];
  }
  return lam;
}

Vector network_output(const LayeredNet& net, const PrimalState& z) {
  const int L = net.layers();
  return net.W[L - 1] * z.z[L - 2] + net.b[L - 1];
}

double clamped_energy(const LayeredNet& net, const Vector& x, const Vector& y,
                      const PrimalState& z) {
  check_input(net, x, &y);
  check_primal(net, z);
  return primal_value(net, x, &y, z);
}

double free_energy(const LayeredNet& net, const Vector& x, const PrimalState& z) {
  check_input(net, x, nullptr);
  check_primal(net, z);
  return primal_value(net, x, nullptr, z);
}

double clamped_dual(const LayeredNet& net, const Vector& x, const Vector& y,
                    const DualState& dual) {
  check_input(net, x, &y);
  check_dual(net, dual);
  return dual_value(net, x, &y, dual);
}

double free_dual(const LayeredNet& net, const Vector& x, const DualState& dual) {
  check_input(net, x, nullptr);
  check_dual(net, dual);
  if (!dual.top.isZero(0.0)) {
    fail(ErrorCode::kInvalidArgument, "the free-phase dual has no output multiplier");
  }
  return dual_value(net, x, nullptr, dual);
}

void cd_primal_pass(const LayeredNet& net, const Vector& x, const Vector* y, PrimalState& z) {
  check_input(net, x, y);
  check_primal(net, z);
  const int L = net.layers();
  for (int k = 1; k < L; ++k) {
    const Vector& prev = k == 1 ? x : z.z[k - 2];
    Vector& cur = z.z[k - 1];
    Vector e = cur - net.W[k - 1] * prev - net.b[k - 1];
    // next = W_k z_k + b_k - (z_{k+1} or y); absent for the free top layer.
    const bool coupled = k + 1 < L || y != nullptr;
    Vector next;
    if (coupled) next = net.W[k] * cur + net.b[k] - (k + 1 < L ? z.z[k] : *y);
    for (Index j = 0; j < cur.size(); ++j) {
      double g = e[j];
      double h = 1.0;
      if (coupled) {
        g += net.W[k].col(j).dot(next);
        h += net.W[k].col(j).squaredNorm();
      }
      const double updated = std::max(0.0, cur[j] - g / h);
      const double delta = updated - cur[j];
      if (delta == 0.0) continue;
      cur[j] = updated;
      e[j] += delta;
      if (coupled) next += delta * net.W[k].col(j);
    }
  }
}

void cd_dual_pass(const LayeredNet& net, const Vector& x, const Vector* y, DualState& dual) {
  check_input(net, x, y);
  check_dual(net, dual);
  const int L = net.layers();
  std::vector<Vector> lam = reconstruct_lambdas(net, dual);
  const std::vector<Vector> c = dual_offsets(net, x, y);
  std::vector<Vector> dir(L);  // dir[m-1] = change of lambda_m per unit step

  auto coordinate = [&](int k, Index j) {
    double g = -(lam[k - 1][j] + c[k - 1][j]);
    double h = 1.0;
    for (int m = k - 1; m >= 1; --m) {
      if (m == k - 1) {
        dir[m - 1] = net.W[m].row(j).transpose();
      } else {
        dir[m - 1] = net.W[m].transpose() * dir[m];
      }
      g -= dir[m - 1].dot(lam[m - 1] + c[m - 1]);
      h += dir[m - 1].squaredNorm();
    }
    double delta = g / h;
    if (k < L) {
      double& s = dual.s[k - 1][j];
      const double updated = std::max(0.0, s + delta);
      delta = updated - s;
      s = updated;
    } else {
      dual.top[j] += delta;
    }
    if (delta == 0.0) return;
    lam[k - 1][j] += delta;
    for (int m = k - 1; m >= 1; --m) lam[m - 1] += delta * dir[m - 1];
  };

  if (y != nullptr) {
    for (Index j = 0; j < dual.top.size(); ++j) coordinate(L, j);
  }
  for (int k = L - 1; k >= 1; --k) {
    for (Index j = 0; j < dual.s[k - 1].size(); ++j) coordinate(k, j);
  }
}

PrimalState ff_init(const LayeredNet& net, const Vector& x) {
  check_input(net, x, nullptr);
  PrimalState z;
  const Vector* prev = &x;
  for (int k = 1; k < net.layers(); ++k) {
    z.z.push_back((net.W[k - 1] * *prev + net.b[k - 1]).cwiseMax(0.0));
    prev = &z.z.back();
  }
  return z;
}

double contrastive_upper(const LayeredNet& net, const std::vector<Sample>& batch,
                         const std::vector<PrimalState>& clamped_primal,
                         const std::vector<DualState>& free_dual_states) {
  if (clamped_primal.size() != batch.size() || free_dual_states.size() != batch.size()) {
    fail(ErrorCode::kDimensionMismatch, "batch and state counts differ");
  }
  double v = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    v += clamped_energy(net, batch[i].x, batch[i].y, clamped_primal[i]) -
         free_dual(net, batch[i].x, free_dual_states[i]);
  }
  return v;
}

double contrastive_lower(const LayeredNet& net, const std::vector<Sample>& batch,
                         const std::vector<DualState>& clamped_dual_states,
                         const std::vector<PrimalState>& free_primal) {
  if (clamped_dual_states.size() != batch.size() || free_primal.size() != batch.size()) {
    fail(ErrorCode::kDimensionMismatch, "batch and state counts differ");
  }
  double v = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    v += clamped_dual(net, batch[i].x, batch[i].y, clamped_dual_states[i]) -
         free_energy(net, batch[i].x, free_primal[i]);
  }
  return v;
}

ParamVector grad_params_upper(const LayeredNet& net, const std::vector<Sample>& batch,
                              const std::vector<PrimalState>& clamped_primal,
                              const std::vector<DualState>& free_dual_states) {
  if (clamped_primal.size() != batch.size() || free_dual_states.size() != batch.size()) {
    fail(ErrorCode::kDimensionMismatch, "batch and state counts differ");
  }
  ParamVector g = ParamVector::Zero(net.layout.parameter_count());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    check_input(net, batch[i].x, &batch[i].y);
    check_primal(net, clamped_primal[i]);
    check_dual(net, free_dual_states[i]);
    accumulate_primal_grad(net, batch[i].x, &batch[i].y, clamped_primal[i], 1.0, g);
    accumulate_dual_grad(net, batch[i].x, nullptr, free_dual_states[i], -1.0, g);
  }
  return g;
}

double estimate_lipschitz(const LayeredNet& net, const std::vector<Sample>& samples) {
  require(!samples.empty(), ErrorCode::kInvalidArgument, "empty dataset");
  // The energy's Hessian in (W_k, b_k) is (|z_k|^2 + 1) I per layer; the
  // factor 2 leaves room for inferred states above the forward activations.
  double a2 = 0.0;
  for (const auto& s : samples) {
    a2 = std::max(a2, s.x.squaredNorm());
    const PrimalState z = ff_init(net, s.x);
    for (const auto& zk : z.z) a2 = std::max(a2, zk.squaredNorm());
  }
  return std::max(1e-3, 2.0 * (1.0 + a2));
}

double classification_accuracy(const LayeredNet& net, const std::vector<Sample>& samples) {
  if (samples.empty()) return 0.0;
  int hits = 0;
  for (const auto& s : samples) {
    const Vector out = network_output(net, ff_init(net, s.x));
    Index pred = 0, label = 0;
    out.maxCoeff(&pred);
    s.y.maxCoeff(&label);
    hits += pred == label ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------

ChlProblem::ChlProblem(NetLayout layout, std::vector<Sample> samples)
    : layout_(std::move(layout)), samples_(std::move(samples)) {
  const Index n_in = layout_.size(0);
  const Index n_out = layout_.size(layout_.layers());
  for (const auto& s : samples_) {
    if (s.x.size() != n_in || s.y.size() != n_out) {
      fail(ErrorCode::kDimensionMismatch, "sample shape does not match the architecture");
    }
  }
}

void ChlProblem::split_upper(Eigen::Ref<const Vector> upper, PrimalState& z,
                             DualState& dual) const {
  const int L = layout_.layers();
  z.z.resize(L - 1);
  dual.s.resize(L - 1);
  Index off = 1;
  for (int k = 1; k < L; ++k) {
    z.z[k - 1] = upper.segment(off, layout_.size(k));
    off += layout_.size(k);
  }
  for (int k = 1; k < L; ++k) {
    dual.s[k - 1] = upper.segment(off, layout_.size(k));
    off += layout_.size(k);
  }
  dual.top = Vector::Zero(layout_.size(L));
}

void ChlProblem::split_lower(Eigen::Ref<const Vector> lower, PrimalState& z,
                             DualState& dual) const {
  split_upper(lower.head(term_upper_size()), z, dual);
  dual.top = lower.tail(layout_.size(layout_.layers()));
}

void ChlProblem::join_upper(const PrimalState& z, const DualState& dual,
                            Eigen::Ref<Vector> upper) const {
  Index off = 1;
  for (const auto& v : z.z) {
    upper.segment(off, v.size()) = v;
    off += v.size();
  }
  for (const auto& v : dual.s) {
    upper.segment(off, v.size()) = v;
    off += v.size();
  }
}

void ChlProblem::join_lower(const PrimalState& z, const DualState& dual,
                            Eigen::Ref<Vector> lower) const {
  join_upper(z, dual, lower.head(term_upper_size()));
  lower.tail(dual.top.size()) = dual.top;
}

Vector ChlProblem::initial_upper_term(Index /*i*/) const {
  return Vector::Zero(term_upper_size());
}

Vector ChlProblem::initial_lower_term(Index /*i*/) const {
  return Vector::Zero(term_lower_size());
}

double ChlProblem::upper_value_term(Index i, const ParamVector& theta,
                                    Eigen::Ref<const Vector> upper) const {
  const LayeredNet net = LayeredNet::unpack(layout_, theta);
  PrimalState z;
  DualState d;
  split_upper(upper, z, d);
  const Sample& s = samples_[i];
  return clamped_energy(net, s.x, s.y, z) - free_dual(net, s.x, d);
}

double ChlProblem::lower_value_term(Index i, const ParamVector& theta,
                                    Eigen::Ref<const Vector> lower) const {
  const LayeredNet net = LayeredNet::unpack(layout_, theta);
  PrimalState z;
  DualState d;
  split_lower(lower, z, d);
  const Sample& s = samples_[i];
  return clamped_dual(net, s.x, s.y, d) - free_energy(net, s.x, z);
}

void ChlProblem::refine_upper_term(Index i, const ParamVector& theta, Eigen::Ref<Vector> upper,
                                   int passes) const {
  check_passes(passes);
  const LayeredNet net = LayeredNet::unpack(layout_, theta);
  const Sample& s = samples_[i];
  PrimalState z;
  DualState d;
  split_upper(upper, z, d);
  if (upper[0] == 0.0) {
    PrimalState ff = ff_init(net, s.x);
    if (primal_value(net, s.x, &s.y, ff) < primal_value(net, s.x, &s.y, z)) z = std::move(ff);
    upper[0] = 1.0;
  }
  for (int p = 0; p < passes; ++p) {
    cd_primal_pass(net, s.x, &s.y, z);
    cd_dual_pass(net, s.x, nullptr, d);
  }
  join_upper(z, d, upper);
}

void ChlProblem::refine_lower_term(Index i, const ParamVector& theta, Eigen::Ref<Vector> lower,
                                   int passes) const {
  check_passes(passes);
  const LayeredNet net = LayeredNet::unpack(layout_, theta);
  const Sample& s = samples_[i];
  PrimalState z;
  DualState d;
  split_lower(lower, z, d);
  if (lower[0] == 0.0) {
    PrimalState ff = ff_init(net, s.x);
    if (primal_value(net, s.x, nullptr, ff) < primal_value(net, s.x, nullptr, z)) {
      z = std::move(ff);
    }
    lower[0] = 1.0;
  }
  for (int p = 0; p < passes; ++p) {
    cd_primal_pass(net, s.x, nullptr, z);
    cd_dual_pass(net, s.x, &s.y, d);
  }
  join_lower(z, d, lower);
}

void ChlProblem::accumulate_grad_upper_term(Index i, const ParamVector& theta,
                                            Eigen::Ref<const Vector> upper,
                                            Eigen::Ref<Vector> grad) const {
  const LayeredNet net = LayeredNet::unpack(layout_, theta);
  PrimalState z;
  DualState d;
  split_upper(upper, z, d);
  const Sample& s = samples_[i];
  accumulate_primal_grad(net, s.x, &s.y, z, 1.0, grad);
  accumulate_dual_grad(net, s.x, nullptr, d, -1.0, grad);
}

}  // namespace gapmm
