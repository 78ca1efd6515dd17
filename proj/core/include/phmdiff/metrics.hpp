#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

#include "phmdiff/image.hpp"

namespace phmdiff {

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

// 10 log10(range^2 / MSE); +inf for identical images.
double psnr(const Image& reference, const Image& test, double data_range = 2.0);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

// Mean SSIM over all fully-contained Gaussian windows.
double ssim(const Image& reference, const Image& test, double data_range = 2.0, const SsimOptions& options = {});

// Normalized 1-D Gaussian taps used by ssim().
std::vector<double> gaussian_window(int size, double sigma);

struct TTestResult {
  double t_statistic = 0.0;
  double p_value = 1.0;
  int degrees_of_freedom = 0;
  double mean_difference = 0.0;
};

// Two-sided paired t-test on a - b.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
};

MeanStd mean_std(std::span<const double> values);

struct ImageScore {
  std::string id;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::string task;
  std::vector<ImageScore> images;

  std::vector<double> psnr_values() const;
  std::vector<double> ssim_values() const;
  MeanStd psnr_summary() const;
  MeanStd ssim_summary() const;
};

// "m ± s" at the given precision; "inf" for infinite means.
std::string format_mean_std(const MeanStd& v, int precision = 2);

// Fixed-width table: task, PSNR (dB) mean ± std, SSIM (%) mean ± std, n.
std::string format_metric_table(std::span<const MetricReport> reports);
// Same numbers, machine-readable, full precision.
std::string format_metric_csv(std::span<const MetricReport> reports);

}  // namespace phmdiff
