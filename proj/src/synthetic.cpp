#include "fixformer/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixformer/errors.hpp"
#include "fixformer/util.hpp"

namespace fixformer {

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  throw ContractError("split_name: unknown split");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ContractError("unknown split '" + s + "', expected train, val or test");
}

SyntheticSpec SyntheticSpec::standard(double gaze_informativeness) {
  SyntheticSpec spec;
  spec.gaze_informativeness = gaze_informativeness;
  return spec;
}

SyntheticSpec SyntheticSpec::imbalanced() {
  SyntheticSpec spec;
  spec.n_classes = 2;
  spec.class_priors = {0.8, 0.2};
  spec.gaze_informativeness = 0.0;  // dwell pattern carries nothing
  spec.seed = 11;
  return spec;
}

void SyntheticSpec::validate() const {
  if (n_classes < 2 || n_classes > 8)
    throw ContractError("SyntheticSpec: n_classes must lie in [2, 8]");
  if (n_train == 0 || n_val == 0 || n_test == 0)
    throw ContractError("SyntheticSpec: every split needs at least one sample");
  if (image_size < 8) throw ContractError("SyntheticSpec: image_size must be >= 8");
  if (!(gaze_informativeness >= 0.0 && gaze_informativeness <= 1.0))
    throw ContractError("SyntheticSpec: gaze_informativeness must lie in [0, 1]");
  if (!(noise >= 0.0 && noise <= 1.2))
    throw ContractError("SyntheticSpec: noise must lie in [0, 1.2]");
  if (!class_priors.empty()) {
    if (class_priors.size() != n_classes)
      throw ContractError("SyntheticSpec: " + std::to_string(class_priors.size()) +
                          " priors for " + std::to_string(n_classes) + " classes");
    double sum = 0.0;
    for (double p : class_priors) {
      if (p < 0.0) throw ContractError("SyntheticSpec: negative class prior");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw ContractError("SyntheticSpec: class priors sum to " + fmt_g17(sum));
  }
}

std::vector<double> SyntheticSpec::priors() const {
  if (!class_priors.empty()) return class_priors;
  return std::vector<double>(n_classes, 1.0 / static_cast<double>(n_classes));
}

Split split_of(const SyntheticSpec& spec, std::size_t index) {
  if (index < spec.n_train) return Split::Train;
  if (index < spec.n_train + spec.n_val) return Split::Val;
  if (index < spec.total()) return Split::Test;
  throw ContractError("split_of: index " + std::to_string(index) + " beyond " +
                      std::to_string(spec.total()) + " samples");
}

namespace {

std::size_t split_size(const SyntheticSpec& spec, Split s) {
  switch (s) {
    case Split::Train: return spec.n_train;
    case Split::Val: return spec.n_val;
    case Split::Test: return spec.n_test;
  }
  throw ContractError("split_size: unknown split");
}

std::size_t split_base(const SyntheticSpec& spec, Split s) {
  switch (s) {
    case Split::Train: return 0;
    case Split::Val: return spec.n_train;
    case Split::Test: return spec.n_train + spec.n_val;
  }
  throw ContractError("split_base: unknown split");
}

// Largest-remainder apportionment; ties break toward the lower class index.
std::vector<std::size_t> class_counts(const std::vector<double>& priors, std::size_t n) {
  std::vector<std::size_t> cnt(priors.size(), 0);
  std::vector<std::pair<double, std::size_t>> frac;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < priors.size(); ++c) {
    double exact = priors[c] * static_cast<double>(n);
    cnt[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += cnt[c];
    frac.push_back({exact - std::floor(exact), c});
  }
  std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t k = 0; k < n - assigned; ++k) cnt[frac[k % frac.size()].second] += 1;
  return cnt;
}

std::string sample_stream(std::size_t index, const char* kind) {
  return "sample" + std::to_string(index) + "." + kind;
}

double clamp(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

}  // namespace

int label_for(const SyntheticSpec& spec, std::size_t index) {
  spec.validate();
  Split s = split_of(spec, index);
  const std::size_t n = split_size(spec, s);
  std::vector<std::size_t> cnt = class_counts(spec.priors(), n);
  std::vector<int> labels;
  labels.reserve(n);
  for (std::size_t c = 0; c < cnt.size(); ++c)
    labels.insert(labels.end(), cnt[c], static_cast<int>(c));
  auto rng = named_rng(spec.seed, std::string("labels.") + split_name(s));
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels[index - split_base(spec, s)];
}

GeneratedSample generate_sample(const SyntheticSpec& spec, std::size_t index) {
  spec.validate();
  GeneratedSample out;
  out.index = index;
  out.split = split_of(spec, index);
  out.label = label_for(spec, index);
  const double lambda = spec.gaze_informativeness;
  const std::size_t c = static_cast<std::size_t>(out.label);

  {
    // Class evidence in the image: a bright blob displaced from the center
    // along a class direction, scaled down as gaze takes over the signal.
    auto rng = named_rng(spec.seed, sample_stream(index, "image"));
    std::normal_distribution<double> jitter(0.0, 0.015 * spec.noise);
    std::uniform_real_distribution<double> bg(0.0, 0.25);
    const double alpha = M_PI / 2.0 + 2.0 * M_PI * static_cast<double>(c) /
                                          static_cast<double>(spec.n_classes);
    const double cx = 0.5 + 0.22 * (1.0 - lambda) * std::cos(alpha) + jitter(rng);
    const double cy = 0.5 + 0.22 * (1.0 - lambda) * std::sin(alpha) + jitter(rng);
    const std::size_t s = spec.image_size;
    std::vector<double> px(s * s);
    const double inv = 1.0 / static_cast<double>(s);
    for (std::size_t r = 0; r < s; ++r) {
      const double y = (static_cast<double>(r) + 0.5) * inv;
      for (std::size_t col = 0; col < s; ++col) {
        const double x = (static_cast<double>(col) + 0.5) * inv;
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        double v = bg(rng) + 0.75 * std::exp(-d2 / (2.0 * 0.10 * 0.10));
        v = clamp(v, 0.0, 1.0);
        px[r * s + col] = std::round(v * 255.0) / 255.0;  // exact image-file values
      }
    }
    out.image.pixels = Tensor({s, s}, std::move(px));
  }

  {
    // Class evidence in the gaze: dwells cycle the corners of a square that
    // rotates toward a class-specific angle as lambda grows.
    auto rng = named_rng(spec.seed, sample_stream(index, "gaze"));
    std::uniform_int_distribution<int> n_dwells(4, 24);
    std::uniform_real_distribution<double> dwell_len(0.16, 0.45);
    std::uniform_int_distribution<int> n_saccade(2, 3);
    std::normal_distribution<double> micro(0.0, 0.002 * spec.noise);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double theta =
        static_cast<double>(c + 1) * 40.0 * M_PI / 180.0;  // distinct for <= 8 classes
    const double m00 = lambda * std::cos(theta) + (1.0 - lambda);
    const double m01 = -lambda * std::sin(theta);
    const double m10 = lambda * std::sin(theta);
    const double m11 = lambda * std::cos(theta) + (1.0 - lambda);
    const double corners[4][2] = {{0.3, 0.3}, {0.3, -0.3}, {-0.3, -0.3}, {-0.3, 0.3}};
    const int k = n_dwells(rng);
    const double clamp_r = 0.006 * spec.noise;
    std::size_t tick = 0;
    auto emit = [&](double x, double y, double ax, double ay) {
      RawGazeSample s;
      s.t_s = static_cast<double>(tick) / 60.0;
      ++tick;
      s.x = clamp(clamp(x, ax - clamp_r, ax + clamp_r), 0.01, 0.99);
      s.y = clamp(clamp(y, ay - clamp_r, ay + clamp_r), 0.01, 0.99);
      s.valid = unit(rng) >= 0.02;
      out.gaze.push_back(s);
    };
    double prev_ax = 0.0, prev_ay = 0.0;
    for (int j = 0; j < k; ++j) {
      const double* v = corners[j % 4];
      const double ax = 0.5 + m00 * v[0] + m01 * v[1];
      const double ay = 0.5 + m10 * v[0] + m11 * v[1];
      if (j > 0) {
        const int hops = n_saccade(rng);
        for (int h = 1; h <= hops; ++h) {
          const double f = static_cast<double>(h) / static_cast<double>(hops + 1);
          const double sx = prev_ax + f * (ax - prev_ax);
          const double sy = prev_ay + f * (ay - prev_ay);
          // transitional samples are unclamped around their own midpoint
          RawGazeSample s;
          s.t_s = static_cast<double>(tick) / 60.0;
          ++tick;
          s.x = clamp(sx + micro(rng), 0.01, 0.99);
          s.y = clamp(sy + micro(rng), 0.01, 0.99);
          s.valid = unit(rng) >= 0.02;
          out.gaze.push_back(s);
        }
      }
      const int n = static_cast<int>(std::round(dwell_len(rng) * 60.0));
      for (int t = 0; t < n; ++t) emit(ax + micro(rng), ay + micro(rng), ax, ay);
      prev_ax = ax;
      prev_ay = ay;
    }
  }
  return out;
}

std::vector<GeneratedSample> generate_dataset(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<GeneratedSample> out;
  out.reserve(spec.total());
  for (std::size_t i = 0; i < spec.total(); ++i) out.push_back(generate_sample(spec, i));
  return out;
}

namespace {

std::string sample_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05zu", index);
  return buf;
}

}  // namespace

void emit_dataset_files(const std::vector<GeneratedSample>& dataset,
                        const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  if (ec) throw DataError("cannot create " + dir + "/images: " + ec.message());
  fs::create_directories(fs::path(dir) / "gaze", ec);
  if (ec) throw DataError("cannot create " + dir + "/gaze: " + ec.message());

  std::ofstream manifest(fs::path(dir) / "manifest.csv");
  if (!manifest) throw DataError("cannot write " + dir + "/manifest.csv");
  manifest << "id,image_path,gaze_path,label,split\n";
  for (const GeneratedSample& s : dataset) {
    const std::string id = sample_id(s.index);
    const std::string image_rel = "images/" + id + ".pgm";
    const std::string gaze_rel = "gaze/" + id + ".csv";
    save_pgm((fs::path(dir) / image_rel).string(), s.image);
    save_gaze_csv((fs::path(dir) / gaze_rel).string(), s.gaze);
    manifest << id << ',' << image_rel << ',' << gaze_rel << ',' << s.label << ','
             << split_name(s.split) << '\n';
  }
  if (!manifest) throw DataError("write failed for " + dir + "/manifest.csv");
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "id,image_path,gaze_path,label,split")
    throw DataError(path + ":1: bad manifest header");
  std::vector<ManifestEntry> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 5)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected 5 fields");
    ManifestEntry e;
    e.id = f[0];
    e.image_path = f[1];
    e.gaze_path = f[2];
    try {
      e.label = std::stoi(f[3]);
    } catch (const std::logic_error&) {
      throw DataError(path + ":" + std::to_string(lineno) + ": bad label '" + f[3] + "'");
    }
    if (e.label < 0)
      throw DataError(path + ":" + std::to_string(lineno) + ": negative label");
    try {
      e.split = parse_split(f[4]);
    } catch (const ContractError& err) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + err.what());
    }
    out.push_back(std::move(e));
  }
  return out;
}

FixationSequence fixations_from_raw(const std::vector<RawGazeSample>& samples) {
  return detect_fixations(samples, kDetectDispersion, kDetectMinDuration);
}

Dataset load_split(const std::string& manifest_path, Split split) {
  namespace fs = std::filesystem;
  const fs::path root = fs::path(manifest_path).parent_path();
  Dataset ds;
  for (const ManifestEntry& e : load_manifest(manifest_path)) {
    if (e.split != split) continue;
    LabeledSample s;
    s.image = load_pgm((root / e.image_path).string());
    s.gaze = fixations_from_raw(load_gaze_csv((root / e.gaze_path).string()).samples);
    s.label = e.label;
    ds.push_back(std::move(s));
  }
  if (ds.empty())
    throw DataError(manifest_path + ": no samples in split " +
                    std::string(split_name(split)));
  return ds;
}

}  // namespace fixformer
