#include "fixformer/gaze.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fixformer/errors.hpp"
#include "fixformer/ops.hpp"
#include "fixformer/util.hpp"

namespace fixformer {

Tensor FixationSequence::starts() const {
  std::vector<double> v(fixations.size());
  for (std::size_t i = 0; i < fixations.size(); ++i) v[i] = fixations[i].start_s;
  return Tensor({fixations.size(), 1}, std::move(v));
}

Tensor FixationSequence::durations() const {
  std::vector<double> v(fixations.size());
  for (std::size_t i = 0; i < fixations.size(); ++i) v[i] = fixations[i].duration_s;
  return Tensor({fixations.size(), 1}, std::move(v));
}

Tensor FixationSequence::coords() const {
  std::vector<double> v(fixations.size() * 2);
  for (std::size_t i = 0; i < fixations.size(); ++i) {
    v[2 * i] = fixations[i].x;
    v[2 * i + 1] = fixations[i].y;
  }
  return Tensor({fixations.size(), 2}, std::move(v));
}

FixationSequence detect_fixations(const std::vector<RawGazeSample>& samples,
                                  double max_dispersion, double min_duration_s) {
  if (max_dispersion <= 0.0 || min_duration_s <= 0.0)
    throw ContractError("detect_fixations: thresholds must be positive");
  std::vector<RawGazeSample> valid;
  valid.reserve(samples.size());
  for (const auto& s : samples)
    if (s.valid) valid.push_back(s);
  if (valid.size() < 2)
    throw EmptyInputError("detect_fixations: need at least 2 valid samples, got " +
                          std::to_string(valid.size()));
  for (std::size_t i = 1; i < valid.size(); ++i)
    if (valid[i].t_s <= valid[i - 1].t_s)
      throw DataError("detect_fixations: timestamps not strictly increasing at sample " +
                      std::to_string(i));

  FixationSequence out;
  const std::size_t n = valid.size();
  std::size_t i = 0;
  while (i < n) {
    double min_x = valid[i].x, max_x = valid[i].x;
    double min_y = valid[i].y, max_y = valid[i].y;
    std::size_t j = i;
    while (j + 1 < n) {
      double nx0 = std::min(min_x, valid[j + 1].x);
      double nx1 = std::max(max_x, valid[j + 1].x);
      double ny0 = std::min(min_y, valid[j + 1].y);
      double ny1 = std::max(max_y, valid[j + 1].y);
      if ((nx1 - nx0) + (ny1 - ny0) > max_dispersion) break;
      min_x = nx0;
      max_x = nx1;
      min_y = ny0;
      max_y = ny1;
      ++j;
    }
    double span = valid[j].t_s - valid[i].t_s;
    if (span >= min_duration_s) {
      double cx = 0.0, cy = 0.0;
      for (std::size_t k = i; k <= j; ++k) {
        cx += valid[k].x;
        cy += valid[k].y;
      }
      double count = static_cast<double>(j - i + 1);
      out.fixations.push_back({valid[i].t_s, span, cx / count, cy / count});
      i = j + 1;
    } else {
      ++i;
    }
  }
  if (out.fixations.empty())
    throw EmptyResultError("detect_fixations: no window reached min_duration");
  return out;
}

Tensor sinusoidal_pe(const std::vector<double>& times_s, std::size_t d_model,
                     double time_scale) {
  if (d_model == 0 || d_model % 2 != 0)
    throw ContractError("sinusoidal_pe: d_model must be even and positive, got " +
                        std::to_string(d_model));
  if (time_scale <= 0.0) throw ContractError("sinusoidal_pe: time_scale must be positive");
  const std::size_t T = times_s.size();
  std::vector<double> v(T * d_model);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < d_model / 2; ++k) {
      double denom = std::pow(time_scale, (2.0 * static_cast<double>(k)) /
                                              static_cast<double>(d_model));
      double arg = times_s[t] / denom;
      v[t * d_model + 2 * k] = std::sin(arg);
      v[t * d_model + 2 * k + 1] = std::cos(arg);
    }
  }
  return Tensor({T, d_model}, std::move(v));
}

Tensor spatial_pe(const Tensor& coords, std::size_t d_model) {
  if (!coords.defined() || !coords.is_matrix() || coords.cols() != 2)
    throw DimensionError("spatial_pe: coords must be [N x 2]");
  if (d_model == 0 || d_model % 4 != 0)
    throw ContractError("spatial_pe: d_model must be divisible by 4, got " +
                        std::to_string(d_model));
  const std::size_t N = coords.rows();
  std::vector<double> xs(N), ys(N);
  for (std::size_t i = 0; i < N; ++i) {
    double x = coords.at(i, 0);
    double y = coords.at(i, 1);
    if (x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0)
      throw ContractError("spatial_pe: coordinates must lie in the unit square");
    xs[i] = x;
    ys[i] = y;
  }
  Tensor ex = sinusoidal_pe(xs, d_model / 2, kSpatialPeScale);
  Tensor ey = sinusoidal_pe(ys, d_model / 2, kSpatialPeScale);
  std::vector<double> v(N * d_model);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t c = 0; c < d_model / 2; ++c) {
      v[i * d_model + c] = ex.at(i, c);
      v[i * d_model + d_model / 2 + c] = ey.at(i, c);
    }
  }
  return Tensor({N, d_model}, std::move(v));
}

GazeEncoderParams GazeEncoderParams::init(std::size_t d_model, std::uint64_t seed,
                                          const std::string& prefix) {
  GazeEncoderParams p;
  // Unit-scale projections: duration and coordinates are already normalized
  // quantities, and the three summed representations must be commensurate
  // with the O(1) sinusoidal part or the token carries no usable signal.
  auto draw = [&](Shape shape, const std::string& name) {
    auto rng = named_rng(seed, prefix + "." + name);
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    std::vector<double> v(n);
    for (double& x : v) x = truncated_normal(rng, 1.0);
    return Tensor(std::move(shape), std::move(v), true);
  };
  p.L_D = draw({1, d_model}, "L_D");
  p.L_C = draw({2, d_model}, "L_C");
  p.b_D = Tensor({1, d_model}, 0.0, true);
  p.b_C = Tensor({1, d_model}, 0.0, true);
  return p;
}

Tensor encode_gaze(const FixationSequence& seq, const GazeEncoderParams& params,
                   double time_scale) {
  if (seq.fixations.empty()) throw EmptyInputError("encode_gaze: empty fixation sequence");
  const std::size_t d = params.d_model();
  if (params.L_D.rows() != 1 || params.L_C.rows() != 2 || params.L_C.cols() != d)
    throw DimensionError("encode_gaze: projection shapes disagree, L_D " +
                         shape_str(params.L_D.shape()) + " L_C " +
                         shape_str(params.L_C.shape()));
  std::vector<double> times(seq.fixations.size());
  for (std::size_t i = 0; i < times.size(); ++i) times[i] = seq.fixations[i].start_s;
  Tensor pe = sinusoidal_pe(times, d, time_scale);
  Tensor term_d = matmul(seq.durations(), params.L_D);
  if (params.b_D.defined()) term_d = add_bias(term_d, params.b_D);
  Tensor term_c = matmul(seq.coords(), params.L_C);
  if (params.b_C.defined()) term_c = add_bias(term_c, params.b_C);
  return add(pe, add(term_d, term_c));
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& path, std::size_t line_no) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing bytes");
    return v;
  } catch (const std::exception&) {
    throw DataError(path + ":" + std::to_string(line_no) + ": bad number '" + s + "'");
  }
}

std::vector<std::string> read_lines(const std::string& path, const char* expected_header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.empty() || lines[0] != expected_header)
    throw DataError(path + ": expected header '" + expected_header + "'");
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

double clamp_unit(double v, std::size_t& clamped) {
  if (v < 0.0) {
    ++clamped;
    return 0.0;
  }
  if (v > 1.0) {
    ++clamped;
    return 1.0;
  }
  return v;
}

}  // namespace

GazeLoadResult load_gaze_csv(const std::string& path) {
  auto lines = read_lines(path, "t_s,x,y,valid");
  GazeLoadResult out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto f = split_fields(lines[i]);
    if (f.size() != 4)
      throw DataError(path + ":" + std::to_string(i + 1) + ": expected 4 fields, got " +
                      std::to_string(f.size()));
    RawGazeSample s;
    s.t_s = parse_double(f[0], path, i + 1);
    s.x = clamp_unit(parse_double(f[1], path, i + 1), out.clamped);
    s.y = clamp_unit(parse_double(f[2], path, i + 1), out.clamped);
    if (f[3] == "0")
      s.valid = false;
    else if (f[3] == "1")
      s.valid = true;
    else
      throw DataError(path + ":" + std::to_string(i + 1) + ": valid must be 0 or 1");
    if (s.t_s < 0.0)
      throw DataError(path + ":" + std::to_string(i + 1) + ": negative timestamp");
    if (!out.samples.empty() && s.t_s <= out.samples.back().t_s)
      throw DataError(path + ":" + std::to_string(i + 1) +
                      ": timestamps must be strictly increasing");
    out.samples.push_back(s);
  }
  return out;
}

void save_gaze_csv(const std::string& path, const std::vector<RawGazeSample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "t_s,x,y,valid\n";
  for (const auto& s : samples)
    out << fmt_g17(s.t_s) << ',' << fmt_g17(s.x) << ',' << fmt_g17(s.y) << ','
        << (s.valid ? '1' : '0') << '\n';
  if (!out) throw DataError("write failed for " + path);
}

FixationSequence load_fixations_csv(const std::string& path) {
  auto lines = read_lines(path, "start_s,duration_s,x,y");
  FixationSequence seq;
  std::size_t clamped = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto f = split_fields(lines[i]);
    if (f.size() != 4)
      throw DataError(path + ":" + std::to_string(i + 1) + ": expected 4 fields, got " +
                      std::to_string(f.size()));
    Fixation fx;
    fx.start_s = parse_double(f[0], path, i + 1);
    fx.duration_s = parse_double(f[1], path, i + 1);
    fx.x = clamp_unit(parse_double(f[2], path, i + 1), clamped);
    fx.y = clamp_unit(parse_double(f[3], path, i + 1), clamped);
    if (fx.start_s < 0.0 || fx.duration_s <= 0.0)
      throw DataError(path + ":" + std::to_string(i + 1) + ": bad start or duration");
    if (!seq.fixations.empty()) {
      const Fixation& prev = seq.fixations.back();
      if (prev.start_s + prev.duration_s > fx.start_s + 1e-9)
        throw DataError(path + ":" + std::to_string(i + 1) + ": fixations overlap in time");
    }
    seq.fixations.push_back(fx);
  }
  return seq;
}

void save_fixations_csv(const std::string& path, const FixationSequence& seq) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "start_s,duration_s,x,y\n";
  for (const auto& f : seq.fixations)
    out << fmt_g17(f.start_s) << ',' << fmt_g17(f.duration_s) << ',' << fmt_g17(f.x) << ','
        << fmt_g17(f.y) << '\n';
  if (!out) throw DataError("write failed for " + path);
}

}  // namespace fixformer
