#include "bmgan/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "bmgan/json_util.hpp"
#include "bmgan/nets.hpp"

namespace bmgan {
namespace {

void require_same_shape(const Volume& a, const Volume& b, const char* what) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

torch::Tensor as_f64(const Volume& v) { return to_tensor(v).to(torch::kFloat64); }

torch::Tensor gaussian_1d(int window, double sigma) {
  auto g = torch::empty({window}, torch::kFloat64);
  auto acc = g.accessor<double, 1>();
  const double r = (window - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < window; ++i) {
    acc[i] = std::exp(-((i - r) * (i - r)) / (2.0 * sigma * sigma));
    sum += acc[i];
  }
  return g / sum;
}

// Valid-mode separable Gaussian filtering of a (1, 1, D, H, W) tensor.
torch::Tensor gaussian_filter(const torch::Tensor& x, const torch::Tensor& g) {
  const auto w = g.size(0);
  auto h = torch::conv3d(x, g.view({1, 1, w, 1, 1}));
  h = torch::conv3d(h, g.view({1, 1, 1, w, 1}));
  return torch::conv3d(h, g.view({1, 1, 1, 1, w}));
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::string fmt(const Psnr& p) { return p.infinite ? "inf" : fmt(p.db); }

nlohmann::json psnr_json(const Psnr& p) { return p.infinite ? nlohmann::json("inf") : nlohmann::json(p.db); }

nlohmann::json summary_json(const Summary& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"infinite", s.infinite}};
}

}  // namespace

void SsimParams::validate() const {
  if (window < 1 || window % 2 == 0) throw ConfigError("ssim.window", "must be a positive odd integer");
  if (!(sigma > 0)) throw ConfigError("ssim.sigma", "must be > 0");
  if (!(k1 > 0) || !(k2 > 0)) throw ConfigError("ssim.k1", "k1 and k2 must be > 0");
  if (!(data_range > 0)) throw ConfigError("ssim.data_range", "must be > 0");
  if (scales < 1) throw ConfigError("ssim.scales", "must be >= 1");
  if (scale_weights.empty() && scales > static_cast<int>(kMsSsimWeights.size())) {
    throw ConfigError("ssim.scales", "more than 5 scales need explicit scale_weights");
  }
  if (!scale_weights.empty()) {
    if (static_cast<int>(scale_weights.size()) != scales) {
      throw ConfigError("ssim.scale_weights", "needs one weight per scale");
    }
    const double sum = std::accumulate(scale_weights.begin(), scale_weights.end(), 0.0);
    if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("ssim.scale_weights", "must sum to 1");
  }
}

void to_json(nlohmann::json& j, const SsimParams& p) {
  j = {{"window", p.window}, {"sigma", p.sigma},           {"k1", p.k1},
       {"k2", p.k2},         {"data_range", p.data_range}, {"scales", p.scales},
       {"scale_weights", p.scale_weights}};
}

void from_json(const nlohmann::json& j, SsimParams& p) {
  const std::string ctx = "ssim";
  require_known_keys(j, {"window", "sigma", "k1", "k2", "data_range", "scales", "scale_weights"}, ctx);
  read_optional(j, "window", p.window, ctx);
  read_optional(j, "sigma", p.sigma, ctx);
  read_optional(j, "k1", p.k1, ctx);
  read_optional(j, "k2", p.k2, ctx);
  read_optional(j, "data_range", p.data_range, ctx);
  read_optional(j, "scales", p.scales, ctx);
  read_optional(j, "scale_weights", p.scale_weights, ctx);
  p.validate();
}

double mae(const Volume& r, const Volume& s) {
  require_same_shape(r, s, "mae");
  const auto a = r.data();
  const auto b = s.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return acc / static_cast<double>(a.size());
}

Psnr psnr(const Volume& r, const Volume& s, double peak) {
  require_same_shape(r, s, "psnr");
  if (!(peak > 0)) throw InvalidArgument("psnr peak must be > 0");
  const auto a = r.data();
  const auto b = s.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.size());
  if (mse == 0.0) return Psnr::inf();
  return {10.0 * std::log10(peak * peak / mse), false};
}

double data_range_peak(const Volume& r) {
  const double range = static_cast<double>(r.max()) - static_cast<double>(r.min());
  return range > 0 ? range : 1.0;
}

SsimMaps ssim_maps(const torch::Tensor& x, const torch::Tensor& y, const SsimParams& p) {
  if (!x.sizes().equals(y.sizes()) || x.dim() != 5) throw ShapeError("ssim: inputs must be equal (1,1,D,H,W) tensors");
  for (int a = 2; a < 5; ++a) {
    if (x.size(a) < p.window) {
      throw ShapeError("ssim: window " + std::to_string(p.window) + " larger than volume extent " +
                       std::to_string(x.size(a)));
    }
  }
  const auto g = gaussian_1d(p.window, p.sigma);
  const auto xd = x.to(torch::kFloat64);
  const auto yd = y.to(torch::kFloat64);
  const auto mu_x = gaussian_filter(xd, g);
  const auto mu_y = gaussian_filter(yd, g);
  const auto sxx = gaussian_filter(xd * xd, g) - mu_x * mu_x;
  const auto syy = gaussian_filter(yd * yd, g) - mu_y * mu_y;
  const auto sxy = gaussian_filter(xd * yd, g) - mu_x * mu_y;
  const double c1 = p.c1();
  const double c2 = p.c2();
  return {(2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1), (2.0 * sxy + c2) / (sxx + syy + c2)};
}

double ssim(const Volume& x, const Volume& y, const SsimParams& p) {
  require_same_shape(x, y, "ssim");
  const auto m = ssim_maps(as_f64(x), as_f64(y), p);
  return (m.l * m.cs).mean().item<double>();
}

int feasible_scales(const Shape3& s, const SsimParams& p) {
  int m = 0;
  while (m < p.scales && s.min_extent() >= static_cast<std::int64_t>(p.window) << m) ++m;
  return m;
}

double signed_pow(double base, double exponent) {
  return base >= 0 ? std::pow(base, exponent) : -std::pow(-base, exponent);
}

MsSsimResult ms_ssim(const Volume& x, const Volume& y, const SsimParams& p) {
  require_same_shape(x, y, "ms_ssim");
  p.validate();
  const int m = feasible_scales(x.shape(), p);
  if (m < 1) {
    throw ShapeError("ms_ssim: volume " + x.shape().str() + " too small for window " + std::to_string(p.window));
  }
  MsSsimResult out;
  out.scales_used = m;
  const auto& base = p.scale_weights.empty() ? kMsSsimWeights : p.scale_weights;
  out.weights_used.assign(base.begin(), base.begin() + m);
  const double wsum = std::accumulate(out.weights_used.begin(), out.weights_used.end(), 0.0);
  for (auto& w : out.weights_used) w /= wsum;

  auto xs = as_f64(x);
  auto ys = as_f64(y);
  double value = 1.0;
  for (int j = 0; j < m; ++j) {
    const auto maps = ssim_maps(xs, ys, p);
    const double term = j + 1 < m ? maps.cs.mean().item<double>() : (maps.l * maps.cs).mean().item<double>();
    out.scale_terms.push_back(term);
    value *= signed_pow(term, out.weights_used[static_cast<std::size_t>(j)]);
    if (j + 1 < m) {
      xs = avg_pool2x(xs, 3);
      ys = avg_pool2x(ys, 3);
    }
  }
  out.value = value;
  return out;
}

double frechet_distance(const torch::Tensor& mu_r, const torch::Tensor& cov_r, const torch::Tensor& mu_g,
                        const torch::Tensor& cov_g) {
  const auto mr = mu_r.to(torch::kFloat64).flatten();
  const auto mg = mu_g.to(torch::kFloat64).flatten();
  const auto cr = cov_r.to(torch::kFloat64);
  const auto cg = cov_g.to(torch::kFloat64);
  const auto f = mr.size(0);
  if (mg.size(0) != f || cr.dim() != 2 || cr.size(0) != f || cr.size(1) != f || !cg.sizes().equals(cr.sizes())) {
    throw ShapeError("frechet_distance: inconsistent moment shapes");
  }
  // Cr^(1/2) Cg Cr^(1/2) is symmetric PSD and has the same spectrum as Cr Cg.
  const auto sym = [](const torch::Tensor& a) { return 0.5 * (a + a.transpose(0, 1)); };
  auto [er, vr] = torch::linalg_eigh(sym(cr));
  const auto sqrt_cr = vr.matmul(torch::diag(er.clamp_min(0.0).sqrt())).matmul(vr.transpose(0, 1));
  const auto inner = sym(sqrt_cr.matmul(cg).matmul(sqrt_cr));
  const auto ev = torch::linalg_eigvalsh(inner).clamp_min(0.0);
  const double trace_sqrt = ev.sqrt().sum().item<double>();
  const double mean_term = (mr - mg).pow(2).sum().item<double>();
  const double value = mean_term + cr.trace().item<double>() + cg.trace().item<double>() - 2.0 * trace_sqrt;
  return std::max(value, 0.0);
}

double fid_from_features(const torch::Tensor& real, const torch::Tensor& fake, double eps) {
  if (real.dim() != 2 || fake.dim() != 2 || real.size(1) != fake.size(1)) {
    throw ShapeError("fid: feature matrices must be (N, F) with equal F");
  }
  if (real.size(0) < 2 || fake.size(0) < 2) throw InvalidArgument("fid: each set needs at least 2 samples");
  auto moments = [eps](const torch::Tensor& f) {
    const auto x = f.to(torch::kFloat64);
    const auto mu = x.mean(0);
    const auto c = x - mu;
    const auto cov = c.transpose(0, 1).matmul(c) / static_cast<double>(x.size(0) - 1) +
                     eps * torch::eye(x.size(1), torch::kFloat64);
    return std::pair{mu, cov};
  };
  const auto [mr, cr] = moments(real);
  const auto [mg, cg] = moments(fake);
  return frechet_distance(mr, cr, mg, cg);
}

double fid(const std::vector<Volume>& real_set, const std::vector<Volume>& fake_set,
           const FeatureExtractor& extractor) {
  if (real_set.size() < 2 || fake_set.size() < 2) throw InvalidArgument("fid: each set needs at least 2 samples");
  torch::NoGradGuard no_grad;
  auto embed_all = [&extractor](const std::vector<Volume>& set) {
    std::vector<torch::Tensor> rows;
    for (const auto& v : set) rows.push_back(extractor.embed(to_tensor(v)));
    return torch::cat(rows, 0);
  };
  return fid_from_features(embed_all(real_set), embed_all(fake_set));
}

Volume difference_map(const Volume& r, const Volume& s) {
  require_same_shape(r, s, "difference_map");
  std::vector<float> out(static_cast<std::size_t>(r.size()));
  const auto a = r.data();
  const auto b = s.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(a[i] - b[i]);
  return Volume(r.shape(), std::move(out), r.spacing());
}

void to_json(nlohmann::json& j, const MetricConfig& c) {
  j = {{"ssim", c.ssim},
       {"psnr_peak", c.psnr_peak},
       {"extractor_seed", c.extractor_seed},
       {"ssim_offset", c.ssim_offset}};
}

void from_json(const nlohmann::json& j, MetricConfig& c) {
  require_known_keys(j, {"ssim", "psnr_peak", "extractor_seed", "ssim_offset"}, "metrics");
  if (j.contains("ssim")) c.ssim = j.at("ssim").get<SsimParams>();
  read_optional(j, "psnr_peak", c.psnr_peak, "metrics");
  read_optional(j, "extractor_seed", c.extractor_seed, "metrics");
  read_optional(j, "ssim_offset", c.ssim_offset, "metrics");
  if (!std::isfinite(c.ssim_offset)) throw ConfigError("metrics.ssim_offset", "must be finite");
  if (!(c.psnr_peak > 0)) throw ConfigError("metrics.psnr_peak", "must be > 0");
}

Volume offset_volume(const Volume& v, double offset) {
  if (offset == 0.0) return v;
  std::vector<float> out(v.data().begin(), v.data().end());
  for (auto& x : out) x = static_cast<float>(x + offset);
  return Volume(v.shape(), std::move(out), v.spacing());
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  std::vector<double> finite;
  for (double v : values) {
    if (std::isfinite(v)) {
      finite.push_back(v);
    } else {
      ++s.infinite;
    }
  }
  if (finite.empty()) {
    s.mean = s.infinite > 0 ? std::numeric_limits<double>::infinity() : 0.0;
    return s;
  }
  s.mean = std::accumulate(finite.begin(), finite.end(), 0.0) / static_cast<double>(finite.size());
  if (finite.size() > 1) {
    double acc = 0.0;
    for (double v : finite) acc += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(acc / static_cast<double>(finite.size() - 1));
  }
  return s;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : per_sample) {
    rows.push_back({{"subject_id", r.subject_id},
                    {"mae", r.mae},
                    {"psnr_fixed_peak", psnr_json(r.psnr_fixed)},
                    {"psnr_range", psnr_json(r.psnr_range)},
                    {"ms_ssim", r.ms_ssim}});
  }
  nlohmann::json cfg = config;
  return {{"mae", summary_json(mae)},
          {"psnr", summary_json(psnr_fixed)},
          {"psnr_data_range", summary_json(psnr_range)},
          {"ms_ssim", summary_json(ms_ssim)},
          {"fid", fid},
          {"ms_ssim_scales", ms_ssim_scales},
          {"ms_ssim_weights", ms_ssim_weights},
          {"config", cfg},
          {"per_sample", rows}};
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os << "subject_id,mae,psnr,psnr_data_range,ms_ssim,fid\n";
  for (const auto& r : per_sample) {
    os << r.subject_id << ',' << fmt(r.mae) << ',' << fmt(r.psnr_fixed) << ',' << fmt(r.psnr_range) << ','
       << fmt(r.ms_ssim) << ",\n";
  }
  auto cell = [](const Summary& s) { return fmt(s.mean) + "±" + fmt(s.std); };
  os << "summary," << cell(mae) << ',' << cell(psnr_fixed) << ',' << cell(psnr_range) << ',' << cell(ms_ssim) << ','
     << fmt(fid) << '\n';
  return os.str();
}

MetricReport evaluate(const std::vector<Volume>& real, const std::vector<Volume>& fake,
                      const std::vector<std::string>& ids, const MetricConfig& cfg,
                      const FeatureExtractor& extractor) {
  if (real.empty()) throw InvalidArgument("evaluate: empty sample set");
  if (real.size() != fake.size() || ids.size() != real.size()) {
    throw InvalidArgument("evaluate: real, fake and id lists differ in length");
  }
  MetricReport rep;
  rep.config = cfg;
  std::vector<double> maes, ps, pr, ms;
  for (std::size_t i = 0; i < real.size(); ++i) {
    PairRecord rec;
    rec.subject_id = ids[i];
    rec.mae = mae(real[i], fake[i]);
    rec.psnr_fixed = psnr(real[i], fake[i], cfg.psnr_peak);
    rec.psnr_range = psnr(real[i], fake[i], data_range_peak(real[i]));
    const auto m = ms_ssim(offset_volume(real[i], cfg.ssim_offset), offset_volume(fake[i], cfg.ssim_offset), cfg.ssim);
    rec.ms_ssim = m.value;
    rep.ms_ssim_scales = m.scales_used;
    rep.ms_ssim_weights = m.weights_used;
    maes.push_back(rec.mae);
    ps.push_back(rec.psnr_fixed.db);
    pr.push_back(rec.psnr_range.db);
    ms.push_back(rec.ms_ssim);
    rep.per_sample.push_back(std::move(rec));
  }
  rep.mae = summarize(maes);
  rep.psnr_fixed = summarize(ps);
  rep.psnr_range = summarize(pr);
  rep.ms_ssim = summarize(ms);
  rep.fid = real.size() >= 2 ? fid(real, fake, extractor) : 0.0;
  return rep;
}

}  // namespace bmgan
