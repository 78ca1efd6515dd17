#include "phmdiff/metrics.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "phmdiff/error.hpp"

namespace phmdiff {

namespace {

void check_dims(const Image& a, const Image& b, const char* op) {
  if (!a.same_dims(b)) {
    throw ShapeError(std::string(op) + ": image dims differ (" + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
  }
}

// Valid-mode separable filtering of a row-major h x w buffer.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w, const std::vector<double>& g) {
  const int k = static_cast<int>(g.size());
  const int ow = w - k + 1, oh = h - k + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += g[i] * src[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += g[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

}  // namespace

double psnr(const Image& reference, const Image& test, double data_range) {
  check_dims(reference, test, "psnr");
  if (!(data_range > 0.0)) throw ContractError("psnr: data_range must be positive");
  double acc = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double d = reference.pixels[i] - test.pixels[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(reference.size());
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(data_range * data_range / mse);
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) total += (g[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma)));
  for (auto& v : g) v /= total;
  return g;
}

double ssim(const Image& reference, const Image& test, double data_range, const SsimOptions& options) {
  check_dims(reference, test, "ssim");
  if (reference.height < options.window || reference.width < options.window) {
    throw ContractError("ssim: image " + std::to_string(reference.height) + "x" + std::to_string(reference.width) +
                        " is smaller than the " + std::to_string(options.window) + "x" +
                        std::to_string(options.window) + " window");
  }
  const auto g = gaussian_window(options.window, options.sigma);
  const int h = reference.height, w = reference.width;
  const auto& x = reference.pixels;
  const auto& y = test.pixels;
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, h, w, g);
  const auto my = filter_valid(y, h, w, g);
  const auto exx = filter_valid(xx, h, w, g);
  const auto eyy = filter_valid(yy, h, w, g);
  const auto exy = filter_valid(xy, h, w, g);
  const double c1 = (options.k1 * data_range) * (options.k1 * data_range);
  const double c2 = (options.k2 * data_range) * (options.k2 * data_range);
  double acc = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double mxx = mx[i] * mx[i];
    const double myy = my[i] * my[i];
    const double mxy = mx[i] * my[i];
    const double sx = exx[i] - mxx;
    const double sy = eyy[i] - myy;
    const double sxy = exy[i] - mxy;
    acc += ((2.0 * mxy + c1) * (2.0 * sxy + c2)) / ((mxx + myy + c1) * (sx + sy + c2));
  }
  return acc / static_cast<double>(mx.size());
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("paired_t_test: samples differ in length");
  if (a.size() < 2) throw ContractError("paired_t_test: need at least 2 pairs");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  for (double v : d)
    if (!std::isfinite(v)) throw DegenerateInputError("paired_t_test: non-finite difference");
  const MeanStd ms = mean_std(d);
  if (!(ms.std > 0.0)) throw DegenerateInputError("paired_t_test: differences have zero variance");
  TTestResult r;
  r.degrees_of_freedom = static_cast<int>(n - 1);
  r.mean_difference = ms.mean;
  r.t_statistic = ms.mean / (ms.std / std::sqrt(static_cast<double>(n)));
  boost::math::students_t dist(static_cast<double>(r.degrees_of_freedom));
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t_statistic)));
  return r;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  if (values.empty()) return r;
  double acc = 0.0;
  for (double v : values) acc += v;
  r.mean = acc / static_cast<double>(values.size());
  if (values.size() < 2 || !std::isfinite(r.mean)) return r;
  double ss = 0.0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return r;
}

std::vector<double> MetricReport::psnr_values() const {
  std::vector<double> v;
  for (const auto& s : images) v.push_back(s.psnr_db);
  return v;
}

std::vector<double> MetricReport::ssim_values() const {
  std::vector<double> v;
  for (const auto& s : images) v.push_back(s.ssim);
  return v;
}

MeanStd MetricReport::psnr_summary() const { return mean_std(psnr_values()); }
MeanStd MetricReport::ssim_summary() const { return mean_std(ssim_values()); }

std::string format_mean_std(const MeanStd& v, int precision) {
  if (std::isinf(v.mean)) return v.mean > 0 ? "inf" : "-inf";
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.*f ± %.*f", precision, v.mean, precision, v.std);
  return buf;
}

std::string format_metric_table(std::span<const MetricReport> reports) {
  std::size_t task_w = 4;
  for (const auto& r : reports) task_w = std::max(task_w, r.task.size());
  std::ostringstream os;
  char line[256];
  // "±" is two bytes in UTF-8, hence the one-wider value columns
  std::snprintf(line, sizeof line, "%-*s  %-20s %-20s %5s\n", static_cast<int>(task_w), "task", "PSNR (dB)",
                "SSIM (%)", "n");
  os << line;
  for (const auto& r : reports) {
    MeanStd s = r.ssim_summary();
    s.mean *= 100.0;
    s.std *= 100.0;
    std::snprintf(line, sizeof line, "%-*s  %-21s %-21s %5zu\n", static_cast<int>(task_w), r.task.c_str(),
                  format_mean_std(r.psnr_summary()).c_str(), format_mean_std(s).c_str(), r.images.size());
    os << line;
  }
  return os.str();
}

std::string format_metric_csv(std::span<const MetricReport> reports) {
  std::ostringstream os;
  os << "task,psnr_mean,psnr_std,ssim_mean,ssim_std,n\n";
  char line[256];
  for (const auto& r : reports) {
    const auto p = r.psnr_summary();
    const auto s = r.ssim_summary();
    std::snprintf(line, sizeof line, "%s,%.17g,%.17g,%.17g,%.17g,%zu\n", r.task.c_str(), p.mean, p.std, s.mean, s.std,
                  r.images.size());
    os << line;
  }
  return os.str();
}

}  // namespace phmdiff
