#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "gapmm/ba_problem.hpp"
#include "gapmm/chl.hpp"
#include "gapmm/error.hpp"

namespace gapmm {

enum class ParseFailure {
  kMalformedHeader,
  kMalformedValue,
  kIndexOutOfRange,
  kTruncated,
  kTrailingData,
  kBadMagic,
  kUnsupportedType,
};

const char* to_string(ParseFailure failure);

/// Parse error with its position: a 1-based line for text formats, a byte
/// offset for IDX.
class ParseError : public Error {
 public:
  ParseError(ParseFailure failure, long position, const std::string& message);

  ParseFailure failure() const noexcept { return failure_; }
  long position() const noexcept { return position_; }

 private:
  ParseFailure failure_;
  long position_;
};

// -- BAL --------------------------------------------------------------------

/// Reads a BAL problem in one pass. Nothing is returned on failure.
BAProblem parse_bal(std::istream& in, const RobustKernel& kernel = {});
BAProblem load_bal(const std::string& path, const RobustKernel& kernel = {});
/// Writes header, observations, one camera value per line, one point
/// coordinate per line, numbers in shortest round-trip form.
void write_bal(const BAProblem& problem, std::ostream& out);
void save_bal(const BAProblem& problem, const std::string& path);

// -- IDX --------------------------------------------------------------------

struct IdxTensor {
  std::vector<std::uint32_t> shape;
  std::vector<std::uint8_t> data;
};

/// Unsigned-byte IDX (type 0x08) only.
IdxTensor parse_idx(std::istream& in);
IdxTensor load_idx(const std::string& path);
void write_idx(const IdxTensor& tensor, std::ostream& out);

/// images [N, ...] scaled to [0, 1]; labels [N] one-hot over `classes`.
/// limit > 0 keeps the first `limit` samples.
std::vector<Sample> idx_samples(const IdxTensor& images, const IdxTensor& labels, Index classes,
                                std::size_t limit = 0);

// -- synthetic bundle adjustment ---------------------------------------------

/// Cameras on a ring of radius 10 around the origin looking inward, points
/// uniform in [-2, 2]^3, focal 500, no distortion.
struct SyntheticBASpec {
  int cameras = 8;
  int points = 200;
  double density = 0.5;  // chance that a camera sees a point
  double noise_px = 0.5;
  double outlier_fraction = 0.3;
  double outlier_spread = 40.0;  // outliers move by U(-spread, spread) per axis
  std::uint64_t seed = 1;
  double tau = 4.0;
  // Perturbation of the initial estimate.
  double init_rotation = 0.005;
  double init_translation = 0.1;
  double init_point = 0.1;

  void validate() const;
};

/// "c=8,p=200,obs=0.5,out=0.3,seed=1" with optional noise, spread, tau,
/// rot, trans, pt keys; the text after "synthetic:".
SyntheticBASpec parse_synthetic_ba_spec(std::string_view text);

struct SyntheticBA {
  BAProblem problem;  // cameras and points hold the initial estimate
  ParamVector truth;
  std::vector<char> outlier;  // per observation
  std::size_t outlier_count = 0;
};

/// Every point is seen by at least two cameras; exactly
/// round(outlier_fraction * observations) observations are outliers.
SyntheticBA synth_ba(const SyntheticBASpec& spec);

// -- synthetic classification -------------------------------------------------

/// Each class is a pair of Gaussian clusters with random centers, so classes
/// interleave and are not linearly separable in general.
struct ClassificationSpec {
  int samples = 200;
  int input_dim = 8;
  int classes = 4;
  double noise = 0.35;
  std::uint64_t seed = 1;

  void validate() const;
};

std::vector<Sample> synth_classification(const ClassificationSpec& spec);

}  // namespace gapmm
