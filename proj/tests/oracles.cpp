#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace oracle {

double mae(const Grid& r, const Grid& s) {
  double acc = 0.0;
  for (std::size_t i = 0; i < r.v.size(); ++i) acc += std::abs(r.v[i] - s.v[i]);
  return acc / static_cast<double>(r.v.size());
}

double mse(const Grid& r, const Grid& s) {
  double acc = 0.0;
  for (std::size_t i = 0; i < r.v.size(); ++i) acc += (r.v[i] - s.v[i]) * (r.v[i] - s.v[i]);
  return acc / static_cast<double>(r.v.size());
}

double psnr(const Grid& r, const Grid& s, double peak) {
  const double m = mse(r, s);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / m);
}

SsimMeans ssim_direct(const Grid& x, const Grid& y, const SsimSetup& p) {
  const int n = p.window;
  const double r = (n - 1) / 2.0;
  // Full 3D kernel, normalized as a whole.
  std::vector<double> k(static_cast<std::size_t>(n * n * n));
  double total = 0.0;
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      for (int c = 0; c < n; ++c) {
        const double d2 = (a - r) * (a - r) + (b - r) * (b - r) + (c - r) * (c - r);
        const double v = std::exp(-d2 / (2.0 * p.sigma * p.sigma));
        k[static_cast<std::size_t>((a * n + b) * n + c)] = v;
        total += v;
      }
    }
  }
  for (auto& v : k) v /= total;

  if (x.d < n || x.h < n || x.w < n) throw std::invalid_argument("window larger than grid");
  SsimMeans out;
  std::int64_t count = 0;
  for (std::int64_t z = 0; z + n <= x.d; ++z) {
    for (std::int64_t yy = 0; yy + n <= x.h; ++yy) {
      for (std::int64_t xx = 0; xx + n <= x.w; ++xx) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int a = 0; a < n; ++a) {
          for (int b = 0; b < n; ++b) {
            for (int c = 0; c < n; ++c) {
              const double wgt = k[static_cast<std::size_t>((a * n + b) * n + c)];
              const double u = x.at(z + a, yy + b, xx + c);
              const double v = y.at(z + a, yy + b, xx + c);
              mx += wgt * u;
              my += wgt * v;
            }
          }
        }
        for (int a = 0; a < n; ++a) {
          for (int b = 0; b < n; ++b) {
            for (int c = 0; c < n; ++c) {
              const double wgt = k[static_cast<std::size_t>((a * n + b) * n + c)];
              const double u = x.at(z + a, yy + b, xx + c) - mx;
              const double v = y.at(z + a, yy + b, xx + c) - my;
              sxx += wgt * u * u;
              syy += wgt * v * v;
              sxy += wgt * u * v;
            }
          }
        }
        const double l = (2 * mx * my + p.c1) / (mx * mx + my * my + p.c1);
        const double cs = (2 * sxy + p.c2) / (sxx + syy + p.c2);
        out.l += l;
        out.cs += cs;
        out.ssim += l * cs;
        ++count;
      }
    }
  }
  out.l /= static_cast<double>(count);
  out.cs /= static_cast<double>(count);
  out.ssim /= static_cast<double>(count);
  return out;
}

Grid downsample(const Grid& g) {
  Grid out(g.d / 2, g.h / 2, g.w / 2);
  for (std::int64_t z = 0; z < out.d; ++z) {
    for (std::int64_t y = 0; y < out.h; ++y) {
      for (std::int64_t x = 0; x < out.w; ++x) {
        double acc = 0.0;
        for (int a = 0; a < 2; ++a) {
          for (int b = 0; b < 2; ++b) {
            for (int c = 0; c < 2; ++c) acc += g.at(2 * z + a, 2 * y + b, 2 * x + c);
          }
        }
        out.at(z, y, x) = acc / 8.0;
      }
    }
  }
  return out;
}

double ms_ssim_direct(const Grid& x, const Grid& y, const SsimSetup& p, const std::vector<double>& weights) {
  Grid a = x;
  Grid b = y;
  double value = 1.0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    const auto m = ssim_direct(a, b, p);
    const double term = j + 1 < weights.size() ? m.cs : m.ssim;
    value *= term >= 0 ? std::pow(term, weights[j]) : -std::pow(-term, weights[j]);
    if (j + 1 < weights.size()) {
      a = downsample(a);
      b = downsample(b);
    }
  }
  return value;
}

double frechet_diagonal(const std::vector<double>& mu_r, const std::vector<double>& var_r,
                        const std::vector<double>& mu_g, const std::vector<double>& var_g) {
  double acc = 0.0;
  for (std::size_t i = 0; i < mu_r.size(); ++i) {
    acc += (mu_r[i] - mu_g[i]) * (mu_r[i] - mu_g[i]);
    acc += var_r[i] + var_g[i] - 2.0 * std::sqrt(var_r[i] * var_g[i]);
  }
  return acc;
}

std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                      std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace oracle
