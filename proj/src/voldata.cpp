#include "bmgan/voldata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>

#include "bmgan/seeds.hpp"
#include "bmgan/volume_io.hpp"

namespace bmgan {
namespace {

// SplitMix64 stream with explicit uniform/normal transforms, so
// phantoms are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() { return state_ = mix64(state_); }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 rotation(double a, double b, double c) {
  const double ca = std::cos(a), sa = std::sin(a);
  const double cb = std::cos(b), sb = std::sin(b);
  const double cc = std::cos(c), sc = std::sin(c);
  // Rz(a) * Ry(b) * Rx(c)
  return {{{ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc},
           {sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc},
           {-sb, cb * sc, cb * cc}}};
}

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> radii;
  Mat3 rot;

  [[nodiscard]] bool contains(double z, double y, double x) const {
    const std::array<double, 3> p{z - center[0], y - center[1], x - center[2]};
    double acc = 0.0;
    for (int i = 0; i < 3; ++i) {
      // q = R^T p
      const double q = rot[0][i] * p[0] + rot[1][i] * p[1] + rot[2][i] * p[2];
      acc += (q / radii[i]) * (q / radii[i]);
    }
    return acc <= 1.0;
  }
};

double frac(double v) { return v - std::floor(v); }

// Trilinear upsampling of a coarse random lattice: smooth, zero-mean-ish texture.
std::vector<double> smooth_noise(Rng& rng, Shape3 s, int lattice) {
  const int n = lattice;
  std::vector<double> grid(static_cast<std::size_t>(n * n * n));
  for (auto& g : grid) g = rng.normal();
  auto g = [&](int z, int y, int x) { return grid[static_cast<std::size_t>((z * n + y) * n + x)]; };

  std::vector<double> out(static_cast<std::size_t>(s.voxels()));
  auto coord = [n](std::int64_t i, std::int64_t extent, int& i0, double& t) {
    const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(extent) * (n - 1);
    i0 = std::min(static_cast<int>(u), n - 2);
    t = u - i0;
  };
  std::size_t idx = 0;
  for (std::int64_t z = 0; z < s.d; ++z) {
    int z0;
    double tz;
    coord(z, s.d, z0, tz);
    for (std::int64_t y = 0; y < s.h; ++y) {
      int y0;
      double ty;
      coord(y, s.h, y0, ty);
      for (std::int64_t x = 0; x < s.w; ++x) {
        int x0;
        double tx;
        coord(x, s.w, x0, tx);
        double v = 0.0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const double w = (dz ? tz : 1 - tz) * (dy ? ty : 1 - ty) * (dx ? tx : 1 - tx);
              v += w * g(z0 + dz, y0 + dy, x0 + dx);
            }
        out[idx++] = v;
      }
    }
  }
  return out;
}

// Separable Gaussian blur with edge clamping.
void gaussian_blur(std::vector<double>& f, Shape3 s, double sigma) {
  if (sigma <= 0) return;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  for (int i = -radius; i <= radius; ++i) k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  const double sum = std::accumulate(k.begin(), k.end(), 0.0);
  for (auto& v : k) v /= sum;

  const std::array<std::int64_t, 3> ext{s.d, s.h, s.w};
  const std::array<std::int64_t, 3> stride{s.h * s.w, s.w, 1};
  std::vector<double> tmp(f.size());
  for (int axis = 0; axis < 3; ++axis) {
    for (std::int64_t z = 0; z < s.d; ++z)
      for (std::int64_t y = 0; y < s.h; ++y)
        for (std::int64_t x = 0; x < s.w; ++x) {
          const std::array<std::int64_t, 3> p{z, y, x};
          const std::int64_t base = z * stride[0] + y * stride[1] + x - p[axis] * stride[axis];
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i) {
            const std::int64_t q = std::clamp<std::int64_t>(p[axis] + i, 0, ext[axis] - 1);
            acc += k[static_cast<std::size_t>(i + radius)] * f[static_cast<std::size_t>(base + q * stride[axis])];
          }
          tmp[static_cast<std::size_t>(z * stride[0] + y * stride[1] + x)] = acc;
        }
    std::swap(f, tmp);
  }
}

Volume normalized_volume(const std::vector<double>& f, Shape3 s) {
  const auto [mn, mx] = std::minmax_element(f.begin(), f.end());
  const double lo = *mn;
  const double range = *mx - *mn;
  if (!(range > 0)) throw DegenerateInput("phantom has no intensity range");
  std::vector<float> out(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    out[i] = static_cast<float>(std::clamp(2.0 * (f[i] - lo) / range - 1.0, -1.0, 1.0));
  }
  return Volume(s, std::move(out));
}

}  // namespace

Volume normalize(const Volume& v, double lo, double hi) {
  if (!(hi > lo)) throw InvalidArgument("normalize requires hi > lo");
  const double mn = v.min();
  const double mx = v.max();
  if (!(mx > mn)) throw DegenerateInput("cannot normalize a constant volume");
  const double scale = (hi - lo) / (mx - mn);
  std::vector<float> out(static_cast<std::size_t>(v.size()));
  const auto in = v.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double t = lo + (static_cast<double>(in[i]) - mn) * scale;
    out[i] = static_cast<float>(std::clamp(t, lo, hi));
  }
  return Volume(v.shape(), std::move(out), v.spacing());
}

void to_json(nlohmann::json& j, const PhantomParams& p) {
  j = {{"shape", {p.shape.d, p.shape.h, p.shape.w}},
       {"structure_count", p.structure_count},
       {"noise_amplitude", p.noise_amplitude},
       {"target_blur_sigma", p.target_blur_sigma}};
}

void from_json(const nlohmann::json& j, PhantomParams& p) {
  const auto& s = j.at("shape");
  p.shape = {s.at(0).get<std::int64_t>(), s.at(1).get<std::int64_t>(), s.at(2).get<std::int64_t>()};
  p.structure_count = j.at("structure_count").get<int>();
  p.noise_amplitude = j.value("noise_amplitude", PhantomParams{}.noise_amplitude);
  p.target_blur_sigma = j.value("target_blur_sigma", PhantomParams{}.target_blur_sigma);
}

ClassMapping class_mapping(int k, int structure_count) {
  const double t = structure_count > 1 ? static_cast<double>(k) / (structure_count - 1) : 0.0;
  return {0.25 + 0.75 * t, 0.4 + 1.2 * frac(0.6180339887 * (k + 1)),
          0.05 + 0.5 * frac(0.7548776662 * (k + 1))};
}

PairedSample generate_phantom_pair(std::uint64_t seed, Shape3 shape, int structure_count) {
  PhantomParams p;
  p.shape = shape;
  p.structure_count = structure_count;
  return generate_phantom_pair(seed, p);
}

PairedSample generate_phantom_pair(std::uint64_t seed, const PhantomParams& params) {
  const Shape3 s = params.shape;
  if (s.d < kMinPhantomExtent || s.h < kMinPhantomExtent || s.w < kMinPhantomExtent) {
    throw ShapeError("phantom shape " + s.str() + " is below the minimum resolvable structure size (" +
                     std::to_string(kMinPhantomExtent) + " per axis)");
  }
  if (params.structure_count < 3) throw InvalidArgument("structure_count must be >= 3");
  if (!(params.noise_amplitude >= 0) || !(params.target_blur_sigma >= 0)) {
    throw InvalidArgument("noise amplitude and blur sigma must be nonnegative");
  }

  Rng rng(derive_seed(seed, "phantom"));
  const std::array<double, 3> ext{static_cast<double>(s.d), static_cast<double>(s.h),
                                  static_cast<double>(s.w)};

  std::vector<Ellipsoid> shapes;
  Ellipsoid head;
  for (int i = 0; i < 3; ++i) {
    head.center[i] = ext[i] * (0.5 + rng.uniform(-0.04, 0.04)) - 0.5;
    head.radii[i] = ext[i] * rng.uniform(0.34, 0.45);
  }
  head.rot = rotation(rng.uniform(-0.4, 0.4), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2));
  shapes.push_back(head);
  for (int k = 1; k < params.structure_count; ++k) {
    Ellipsoid e;
    for (int i = 0; i < 3; ++i) {
      e.center[i] = head.center[i] + head.radii[i] * rng.uniform(-0.5, 0.5);
      e.radii[i] = ext[i] * rng.uniform(0.08, 0.22);
    }
    e.rot = rotation(rng.uniform(0, std::numbers::pi), rng.uniform(0, std::numbers::pi),
                     rng.uniform(0, std::numbers::pi));
    shapes.push_back(e);
  }

  std::vector<double> jitter(static_cast<std::size_t>(params.structure_count));
  for (auto& j : jitter) j = rng.uniform(-0.02, 0.02);

  const auto noise = smooth_noise(rng, s, 6);

  const auto n = static_cast<std::size_t>(s.voxels());
  std::vector<double> src(n, 0.0);
  std::vector<double> tgt(n, 0.0);
  std::size_t idx = 0;
  for (std::int64_t z = 0; z < s.d; ++z)
    for (std::int64_t y = 0; y < s.h; ++y)
      for (std::int64_t x = 0; x < s.w; ++x, ++idx) {
        int label = -1;
        for (int k = 0; k < params.structure_count; ++k) {
          if (shapes[static_cast<std::size_t>(k)].contains(static_cast<double>(z), static_cast<double>(y),
                                                           static_cast<double>(x))) {
            label = k;
          }
        }
        if (label < 0) continue;
        const auto m = class_mapping(label, params.structure_count);
        const double sv = m.source_base + jitter[static_cast<std::size_t>(label)] +
                          params.noise_amplitude * noise[idx];
        src[idx] = sv;
        tgt[idx] = m.a * sv * sv + m.b;
      }
  gaussian_blur(tgt, s, params.target_blur_sigma);

  PairedSample out;
  out.source = normalized_volume(src, s);
  out.target = normalized_volume(tgt, s);
  out.subject_id = "phantom-" + std::to_string(seed);
  out.seed = seed;
  return out;
}

SplitMap split_dataset(std::int64_t n, int folds, int fold_index, std::uint64_t seed) {
  if (folds < 2) throw InvalidArgument("folds must be >= 2");
  if (fold_index < 0 || fold_index >= folds) throw InvalidArgument("fold_index out of range");
  if (n < folds) throw InvalidArgument("n must be >= folds");

  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  for (std::size_t i = perm.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.next() % (i + 1));
    std::swap(perm[i], perm[j]);
  }

  const int test_folds = std::max(1, static_cast<int>(std::lround(folds / 5.0)));
  const int val_folds = folds >= 3 ? std::max(1, static_cast<int>(std::lround(folds / 10.0))) : 0;
  const int train_folds = folds - test_folds - val_folds;

  SplitMap split{{"train", {}}, {"val", {}}, {"test", {}}};
  for (int f = 0; f < folds; ++f) {
    const int role = ((f - fold_index) % folds + folds) % folds;
    const char* name = role < train_folds ? "train" : role < train_folds + val_folds ? "val" : "test";
    const std::int64_t begin = f * n / folds;
    const std::int64_t end = (f + 1) * n / folds;
    for (std::int64_t i = begin; i < end; ++i) split[name].push_back(perm[static_cast<std::size_t>(i)]);
  }
  for (auto& [_, idx] : split) std::sort(idx.begin(), idx.end());
  return split;
}

void DatasetManifest::validate() const {
  const auto n = static_cast<std::int64_t>(samples.size());
  std::set<std::int64_t> seen;
  std::size_t total = 0;
  for (const auto& [name, idx] : split) {
    if (name != "train" && name != "val" && name != "test") {
      throw InvalidArgument("unknown split name '" + name + "'");
    }
    for (auto i : idx) {
      if (i < 0 || i >= n) throw InvalidArgument("split index out of range in '" + name + "'");
      seen.insert(i);
    }
    total += idx.size();
  }
  if (seen.size() != total) throw InvalidArgument("split lists are not disjoint");
  if (static_cast<std::int64_t>(seen.size()) != n) throw InvalidArgument("split does not cover all samples");
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : m.samples) {
    samples.push_back({{"subject_id", s.subject_id},
                       {"seed", s.seed},
                       {"source", s.source_file},
                       {"target", s.target_file}});
  }
  return {{"schema_version", "1"},
          {"global_seed", m.global_seed},
          {"generator_params", m.generator_params},
          {"samples", samples},
          {"split", m.split}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  if (j.value("schema_version", std::string{}) != "1") {
    throw InvalidArgument("manifest schema_version must be \"1\"");
  }
  DatasetManifest m;
  m.global_seed = j.at("global_seed").get<std::uint64_t>();
  m.generator_params = j.at("generator_params").get<PhantomParams>();
  for (const auto& s : j.at("samples")) {
    m.samples.push_back({s.at("subject_id").get<std::string>(), s.at("seed").get<std::uint64_t>(),
                         s.at("source").get<std::string>(), s.at("target").get<std::string>()});
  }
  m.split = j.at("split").get<SplitMap>();
  m.validate();
  return m;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write manifest " + path.string());
  os << manifest_to_json(m).dump(2) << '\n';
  if (!os) throw std::runtime_error("cannot write manifest " + path.string());
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest " + path.string());
  try {
    return manifest_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("malformed manifest " + path.string() + ": " + e.what());
  }
}

std::vector<const PairedSample*> Dataset::subset(const std::string& name) const {
  std::vector<const PairedSample*> out;
  const auto it = split.find(name);
  if (it == split.end()) return out;
  for (auto i : it->second) out.push_back(&samples.at(static_cast<std::size_t>(i)));
  return out;
}

Dataset materialize(const DatasetManifest& m) {
  Dataset d;
  d.split = m.split;
  for (const auto& s : m.samples) d.samples.push_back(generate_phantom_pair(s.seed, m.generator_params));
  return d;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  const auto m = load_manifest(manifest_path);
  const auto dir = manifest_path.parent_path();
  Dataset d;
  d.split = m.split;
  for (const auto& s : m.samples) {
    PairedSample p{load_volume(dir / s.source_file), load_volume(dir / s.target_file), s.subject_id, s.seed};
    if (!(p.source.shape() == p.target.shape())) {
      throw ShapeError("sample " + s.subject_id + " has mismatched source/target shapes");
    }
    d.samples.push_back(std::move(p));
  }
  return d;
}

namespace {

DatasetManifest manifest_skeleton(std::uint64_t global_seed, const PhantomParams& params, std::int64_t n) {
  DatasetManifest m;
  m.global_seed = global_seed;
  m.generator_params = params;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto seed = derive_seed(global_seed, "data", static_cast<std::uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof(name), "%05lld", static_cast<long long>(i));
    m.samples.push_back({std::string("subject-") + name, seed, std::string(name) + "_mr.vol",
                         std::string(name) + "_pet.vol"});
  }
  return m;
}

}  // namespace

DatasetManifest make_manifest(std::uint64_t global_seed, const PhantomParams& params, std::int64_t n_train,
                              std::int64_t n_val, std::int64_t n_test) {
  if (n_train < 0 || n_val < 0 || n_test < 0 || n_train + n_val + n_test == 0) {
    throw InvalidArgument("dataset must contain at least one sample");
  }
  auto m = manifest_skeleton(global_seed, params, n_train + n_val + n_test);
  m.split = {{"train", {}}, {"val", {}}, {"test", {}}};
  for (std::int64_t i = 0; i < n_train + n_val + n_test; ++i) {
    m.split[i < n_train ? "train" : i < n_train + n_val ? "val" : "test"].push_back(i);
  }
  return m;
}

DatasetManifest make_manifest_kfold(std::uint64_t global_seed, const PhantomParams& params, std::int64_t n,
                                    int folds, int fold_index) {
  auto split = split_dataset(n, folds, fold_index, derive_seed(global_seed, "split"));
  auto m = manifest_skeleton(global_seed, params, n);
  m.split = std::move(split);
  return m;
}

}  // namespace bmgan
