#include "gapmm/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

#include <Eigen/Geometry>

#include "gapmm/trace.hpp"

namespace gapmm {

const char* to_string(ParseFailure failure) {
  switch (failure) {
    case ParseFailure::kMalformedHeader: return "malformed header";
    case ParseFailure::kMalformedValue: return "malformed value";
    case ParseFailure::kIndexOutOfRange: return "index out of range";
    case ParseFailure::kTruncated: return "truncated file";
    case ParseFailure::kTrailingData: return "trailing data";
    case ParseFailure::kBadMagic: return "bad magic";
    case ParseFailure::kUnsupportedType: return "unsupported type";
  }
  return "parse error";
}

ParseError::ParseError(ParseFailure failure, long position, const std::string& message)
    : Error(ErrorCode::kParse, message), failure_(failure), position_(position) {}

namespace {

[[noreturn]] void parse_fail(ParseFailure failure, long line, const std::string& what) {
  throw ParseError(failure, line,
                   "line " + std::to_string(line) + ": " + to_string(failure) + ": " + what);
}

/// Whitespace-separated tokens with the line each one starts on.
class TokenReader {
 public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  bool next(std::string& token) {
    token.clear();
    int c = 0;
    while ((c = in_.get()) != std::char_traits<char>::eof()) {
      if (c == '\n') {
        ++line_;
      } else if (!std::isspace(c)) {
        break;
      }
    }
    if (c == std::char_traits<char>::eof()) return false;
    token.push_back(static_cast<char>(c));
    while ((c = in_.peek()) != std::char_traits<char>::eof() && !std::isspace(c)) {
      token.push_back(static_cast<char>(in_.get()));
    }
    return true;
  }

  long line() const { return line_; }

 private:
  std::istream& in_;
  long line_ = 1;
};

template <typename T>
bool parse_number(const std::string& token, T& value) {
  const char* first = token.data();
  const char* last = first + token.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  return ec == std::errc() && ptr == last;
}

class BalReader {
 public:
  explicit BalReader(std::istream& in) : tokens_(in) {}

  long header_count(const char* what) {
    if (!tokens_.next(token_)) {
      parse_fail(ParseFailure::kMalformedHeader, tokens_.line(),
                 std::string("missing ") + what + " count");
    }
    long value = 0;
    if (tokens_.line() != 1 || !parse_number(token_, value) || value < 0) {
      parse_fail(ParseFailure::kMalformedHeader, tokens_.line(),
                 std::string("bad ") + what + " count '" + token_ + "'");
    }
    return value;
  }

  /// One observation line: four fields that must share a line. A short line
  /// means the observation block ended before the header count.
  Observation observation(long cameras, long points, long k, long count) {
    std::string fields[4];
    long line = 0;
    for (int f = 0; f < 4; ++f) {
      expect("observation field");
      if (f == 0) {
        line = tokens_.line();
      } else if (tokens_.line() != line) {
        parse_fail(ParseFailure::kTruncated, line,
                   "observation " + std::to_string(k + 1) + " of " + std::to_string(count) +
                       " has fewer than 4 fields");
      }
      fields[f] = token_;
    }
    Observation o;
    o.camera = static_cast<int>(to_index(fields[0], "camera", cameras, line));
    o.point = static_cast<int>(to_index(fields[1], "point", points, line));
    o.measurement.x() = to_real(fields[2], "measurement", line);
    o.measurement.y() = to_real(fields[3], "measurement", line);
    return o;
  }

  double real(const char* what) {
    expect(what);
    return to_real(token_, what, tokens_.line());
  }

  void finish() {
    if (tokens_.next(token_)) {
      parse_fail(ParseFailure::kTrailingData, tokens_.line(), "unexpected '" + token_ + "'");
    }
  }

 private:
  static long to_index(const std::string& token, const char* what, long bound, long line) {
    long value = 0;
    if (!parse_number(token, value)) {
      parse_fail(ParseFailure::kMalformedValue, line,
                 std::string("bad ") + what + " index '" + token + "'");
    }
    if (value < 0 || value >= bound) {
      parse_fail(ParseFailure::kIndexOutOfRange, line,
                 std::string(what) + " index " + std::to_string(value) + " not below " +
                     std::to_string(bound));
    }
    return value;
  }

  static double to_real(const std::string& token, const char* what, long line) {
    double value = 0.0;
    if (!parse_number(token, value) || !std::isfinite(value)) {
      parse_fail(ParseFailure::kMalformedValue, line,
                 std::string("bad ") + what + " '" + token + "'");
    }
    return value;
  }

  void expect(const char* what) {
    if (!tokens_.next(token_)) {
      parse_fail(ParseFailure::kTruncated, tokens_.line(), std::string("expected ") + what);
    }
  }

  TokenReader tokens_;
  std::string token_;
};

}  // namespace

BAProblem parse_bal(std::istream& in, const RobustKernel& kernel) {
  BalReader reader(in);
  const long nc = reader.header_count("camera");
  const long np = reader.header_count("point");
  const long no = reader.header_count("observation");
  if (nc < 1 || np < 1) {
    parse_fail(ParseFailure::kMalformedHeader, 1, "need at least one camera and one point");
  }

  BAProblem problem;
  problem.kernel = kernel;
  problem.observations.resize(static_cast<std::size_t>(no));
  for (long k = 0; k < no; ++k) {
    problem.observations[static_cast<std::size_t>(k)] = reader.observation(nc, np, k, no);
  }
  problem.cameras.resize(static_cast<std::size_t>(nc));
  for (auto& c : problem.cameras) {
    for (int k = 0; k < 3; ++k) c.rotation[k] = reader.real("camera rotation");
    for (int k = 0; k < 3; ++k) c.translation[k] = reader.real("camera translation");
    c.focal = reader.real("focal length");
    c.k1 = reader.real("k1");
    c.k2 = reader.real("k2");
  }
  problem.points.resize(static_cast<std::size_t>(np));
  for (auto& p : problem.points) {
    for (int k = 0; k < 3; ++k) p[k] = reader.real("point coordinate");
  }
  reader.finish();
  problem.validate();
  return problem;
}

BAProblem load_bal(const std::string& path, const RobustKernel& kernel) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "'");
  return parse_bal(in, kernel);
}

void write_bal(const BAProblem& problem, std::ostream& out) {
  out << problem.cameras.size() << ' ' << problem.points.size() << ' '
      << problem.observations.size() << '\n';
  for (const auto& o : problem.observations) {
    out << o.camera << ' ' << o.point << ' ' << format_double(o.measurement.x()) << ' '
        << format_double(o.measurement.y()) << '\n';
  }
  for (const auto& c : problem.cameras) {
    for (int k = 0; k < 3; ++k) out << format_double(c.rotation[k]) << '\n';
    for (int k = 0; k < 3; ++k) out << format_double(c.translation[k]) << '\n';
    out << format_double(c.focal) << '\n' << format_double(c.k1) << '\n'
        << format_double(c.k2) << '\n';
  }
  for (const auto& p : problem.points) {
    for (int k = 0; k < 3; ++k) out << format_double(p[k]) << '\n';
  }
}

void save_bal(const BAProblem& problem, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  write_bal(problem, out);
  out.flush();
  if (!out) fail(ErrorCode::kIo, "failed writing '" + path + "'");
}

// -- IDX --------------------------------------------------------------------

namespace {

[[noreturn]] void idx_fail(ParseFailure failure, long offset, const std::string& what) {
  throw ParseError(failure, offset,
                   "byte " + std::to_string(offset) + ": " + to_string(failure) + ": " + what);
}

}  // namespace

IdxTensor parse_idx(std::istream& in) {
  long offset = 0;
  auto read_bytes = [&](unsigned char* dst, std::size_t n, const char* what) {
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(in.gcount());
    if (got != n) idx_fail(ParseFailure::kTruncated, offset + static_cast<long>(got), what);
    offset += static_cast<long>(n);
  };

  unsigned char magic[4];
  read_bytes(magic, 4, "magic number");
  if (magic[0] != 0 || magic[1] != 0) idx_fail(ParseFailure::kBadMagic, 0, "expected 00 00");
  if (magic[2] != 0x08) {
    idx_fail(ParseFailure::kUnsupportedType, 2,
             "type byte " + std::to_string(magic[2]) + " (only 0x08 is supported)");
  }
  if (magic[3] == 0) idx_fail(ParseFailure::kMalformedHeader, 3, "zero dimensions");

  IdxTensor t;
  std::uint64_t count = 1;
  for (int d = 0; d < magic[3]; ++d) {
    unsigned char b[4];
    read_bytes(b, 4, "dimension size");
    const std::uint32_t n = (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
                            (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
    t.shape.push_back(n);
    count *= n;
    if (count > (std::uint64_t{1} << 34)) {
      idx_fail(ParseFailure::kMalformedHeader, offset - 4, "tensor too large");
    }
  }
  t.data.resize(static_cast<std::size_t>(count));
  // Read in bounded chunks so a lying header fails at the real end of data.
  constexpr std::size_t kChunk = 1 << 16;
  for (std::size_t pos = 0; pos < t.data.size(); pos += kChunk) {
    read_bytes(t.data.data() + pos, std::min(kChunk, t.data.size() - pos), "payload");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    idx_fail(ParseFailure::kTrailingData, offset, "bytes after the payload");
  }
  return t;
}

IdxTensor load_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "'");
  return parse_idx(in);
}

void write_idx(const IdxTensor& tensor, std::ostream& out) {
  require(!tensor.shape.empty() && tensor.shape.size() < 256, ErrorCode::kInvalidArgument,
          "IDX tensors need 1 to 255 dimensions");
  std::uint64_t count = 1;
  for (auto n : tensor.shape) count *= n;
  require(count == tensor.data.size(), ErrorCode::kDimensionMismatch,
          "IDX shape does not match the payload length");
  const char magic[4] = {0, 0, 0x08, static_cast<char>(tensor.shape.size())};
  out.write(magic, 4);
  for (auto n : tensor.shape) {
    const char b[4] = {static_cast<char>(n >> 24), static_cast<char>(n >> 16),
                       static_cast<char>(n >> 8), static_cast<char>(n)};
    out.write(b, 4);
  }
  out.write(reinterpret_cast<const char*>(tensor.data.data()),
            static_cast<std::streamsize>(tensor.data.size()));
}

std::vector<Sample> idx_samples(const IdxTensor& images, const IdxTensor& labels, Index classes,
                                std::size_t limit) {
  require(classes >= 1, ErrorCode::kInvalidArgument, "need at least one class");
  if (images.shape.empty() || labels.shape.size() != 1 || images.shape[0] != labels.shape[0]) {
    fail(ErrorCode::kDimensionMismatch, "image and label tensors do not pair up");
  }
  const std::size_t n = images.shape[0];
  const std::size_t features = n == 0 ? 0 : images.data.size() / n;
  const std::size_t keep = limit > 0 ? std::min(limit, n) : n;
  std::vector<Sample> out(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    const std::uint8_t label = labels.data[i];
    if (label >= classes) {
      fail(ErrorCode::kInvalidArgument,
           "label " + std::to_string(label) + " of sample " + std::to_string(i) +
               " exceeds the class count");
    }
    out[i].x.resize(static_cast<Index>(features));
    for (std::size_t f = 0; f < features; ++f) {
      out[i].x[static_cast<Index>(f)] = images.data[i * features + f] / 255.0;
    }
    out[i].y = Vector::Zero(classes);
    out[i].y[label] = 1.0;
  }
  return out;
}

// -- synthetic bundle adjustment ---------------------------------------------

void SyntheticBASpec::validate() const {
  require(cameras >= 2, ErrorCode::kInvalidArgument, "synthetic BA needs at least two cameras");
  require(points >= 1, ErrorCode::kInvalidArgument, "synthetic BA needs at least one point");
  require(density > 0.0 && density <= 1.0, ErrorCode::kInvalidArgument,
          "observation density must be in (0, 1]");
  require(outlier_fraction >= 0.0 && outlier_fraction < 1.0, ErrorCode::kInvalidArgument,
          "outlier fraction must be in [0, 1)");
  require(noise_px >= 0.0 && outlier_spread >= 0.0 && tau > 0.0, ErrorCode::kInvalidArgument,
          "noise and spread must be >= 0, tau > 0");
  require(init_rotation >= 0.0 && init_translation >= 0.0 && init_point >= 0.0,
          ErrorCode::kInvalidArgument, "initial perturbations must be >= 0");
}

SyntheticBASpec parse_synthetic_ba_spec(std::string_view text) {
  SyntheticBASpec spec;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string_view item = text.substr(pos, comma - pos);
    pos = comma + 1;
    if (item.empty()) continue;
    const std::size_t eq = item.find('=');
    if (eq == std::string_view::npos) {
      fail(ErrorCode::kInvalidArgument, "synthetic spec item '" + std::string(item) +
                                            "' is not key=value");
    }
    const std::string key(item.substr(0, eq));
    const std::string value(item.substr(eq + 1));
    double v = 0.0;
    if (!parse_number(value, v)) {
      fail(ErrorCode::kInvalidArgument, "bad value for '" + key + "': '" + value + "'");
    }
    auto as_int = [&]() {
      if (v != std::floor(v) || v < 0 || v > 1e9) {
        fail(ErrorCode::kInvalidArgument, "'" + key + "' needs a non-negative integer");
      }
      return static_cast<int>(v);
    };
    if (key == "c") {
      spec.cameras = as_int();
    } else if (key == "p") {
      spec.points = as_int();
    } else if (key == "obs") {
      spec.density = v;
    } else if (key == "out") {
      spec.outlier_fraction = v;
    } else if (key == "seed") {
      spec.seed = static_cast<std::uint64_t>(as_int());
    } else if (key == "noise") {
      spec.noise_px = v;
    } else if (key == "spread") {
      spec.outlier_spread = v;
    } else if (key == "tau") {
      spec.tau = v;
    } else if (key == "rot") {
      spec.init_rotation = v;
    } else if (key == "trans") {
      spec.init_translation = v;
    } else if (key == "pt") {
      spec.init_point = v;
    } else {
      fail(ErrorCode::kInvalidArgument, "unknown synthetic spec key '" + key + "'");
    }
  }
  spec.validate();
  return spec;
}

SyntheticBA synth_ba(const SyntheticBASpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> box(-2.0, 2.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  SyntheticBA out;
  BAProblem& problem = out.problem;
  problem.kernel = RobustKernel::smooth_truncated_quadratic(spec.tau);

  constexpr double kRadius = 10.0;
  constexpr double kPi = 3.14159265358979323846;
  for (int k = 0; k < spec.cameras; ++k) {
    const double phi = 2.0 * kPi * k / spec.cameras;
    const Vector3 center(kRadius * std::cos(phi), 0.0, kRadius * std::sin(phi));
    // Camera z points away from the scene; BAL cameras look down -z.
    const Vector3 back = center.normalized();
    const Vector3 right = Vector3::UnitY().cross(back).normalized();
    const Vector3 up = back.cross(right);
    Eigen::Matrix3d R;
    R.row(0) = right.transpose();
    R.row(1) = up.transpose();
    R.row(2) = back.transpose();
    const Eigen::AngleAxisd aa(R);
    CameraPose cam;
    cam.rotation = aa.angle() * aa.axis();
    cam.translation = -R * center;
    cam.focal = 500.0;
    problem.cameras.push_back(cam);
  }
  for (int j = 0; j < spec.points; ++j) {
    problem.points.emplace_back(box(rng), box(rng), box(rng));
  }
  out.truth = pack_parameters(problem);

  for (int j = 0; j < spec.points; ++j) {
    std::vector<int> seen;
    for (int k = 0; k < spec.cameras; ++k) {
      if (unit(rng) < spec.density) seen.push_back(k);
    }
    while (seen.size() < 2) {
      const int k = static_cast<int>(rng() % static_cast<std::uint64_t>(spec.cameras));
      if (std::find(seen.begin(), seen.end(), k) == seen.end()) seen.push_back(k);
    }
    std::sort(seen.begin(), seen.end());
    for (int k : seen) {
      Observation o;
      o.camera = k;
      o.point = j;
      o.measurement = project(problem.cameras[k], problem.points[j]);
      o.measurement.x() += spec.noise_px * normal(rng);
      o.measurement.y() += spec.noise_px * normal(rng);
      problem.observations.push_back(o);
    }
  }

  const std::size_t m = problem.observations.size();
  out.outlier.assign(m, 0);
  out.outlier_count =
      static_cast<std::size_t>(std::llround(spec.outlier_fraction * static_cast<double>(m)));
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_real_distribution<double> spread(-spec.outlier_spread, spec.outlier_spread);
  for (std::size_t n = 0; n < out.outlier_count; ++n) {
    Observation& o = problem.observations[order[n]];
    o.measurement = project(problem.cameras[o.camera], problem.points[o.point]) +
                    Vector2(spread(rng), spread(rng));
    out.outlier[order[n]] = 1;
  }

  for (auto& cam : problem.cameras) {
    for (int k = 0; k < 3; ++k) cam.rotation[k] += spec.init_rotation * normal(rng);
    for (int k = 0; k < 3; ++k) cam.translation[k] += spec.init_translation * normal(rng);
  }
  for (auto& p : problem.points) {
    for (int k = 0; k < 3; ++k) p[k] += spec.init_point * normal(rng);
  }
  return out;
}

// -- synthetic classification -------------------------------------------------

void ClassificationSpec::validate() const {
  require(samples >= 1 && input_dim >= 1 && classes >= 1, ErrorCode::kInvalidArgument,
          "classification counts must be >= 1");
  require(noise >= 0.0, ErrorCode::kInvalidArgument, "noise must be >= 0");
}

std::vector<Sample> synth_classification(const ClassificationSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vector> centers;
  for (int c = 0; c < 2 * spec.classes; ++c) {
    Vector mu(spec.input_dim);
    for (int d = 0; d < spec.input_dim; ++d) mu[d] = normal(rng);
    centers.push_back(std::move(mu));
  }
  std::vector<Sample> out(static_cast<std::size_t>(spec.samples));
  for (int i = 0; i < spec.samples; ++i) {
    const int label = i % spec.classes;
    const int cluster = (i / spec.classes) % 2;
    Sample& s = out[static_cast<std::size_t>(i)];
    s.x = centers[static_cast<std::size_t>(2 * label + cluster)];
    for (int d = 0; d < spec.input_dim; ++d) s.x[d] += spec.noise * normal(rng);
    s.y = Vector::Zero(spec.classes);
    s.y[label] = 1.0;
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace gapmm
