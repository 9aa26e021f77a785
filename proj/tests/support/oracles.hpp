#pragma once

// Reference implementations used only by tests. They avoid the library's
// kernels and are written as plain loops over std::vector.

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <vector>

namespace oracle {

inline std::vector<double> conv_valid(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out;
  for (std::size_t n = 0; n + b.size() <= a.size(); ++n) {
    double acc = 0.0;
    for (std::size_t m = 0; m < b.size(); ++m) acc += a[n + m] * b[m];
    out.push_back(acc);
  }
  return out;
}

// Pads `a` with len(b) - 1 zeros on both sides, then slides.
inline std::vector<double> conv_full(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> padded(b.size() - 1, 0.0);
  padded.insert(padded.end(), a.begin(), a.end());
  padded.insert(padded.end(), b.size() - 1, 0.0);
  return conv_valid(padded, b);
}

// Label index for PPG sample n found by walking label timestamps:
// the last label j whose start time j / label_rate is <= n / ppg_rate.
inline std::size_t resample_index(std::size_t n, std::uint64_t ppg_rate, std::uint64_t label_rate) {
  std::size_t j = 0;
  while ((j + 1) * ppg_rate <= n * label_rate) ++j;
  return j;
}

inline std::vector<double> mean_pool(const std::vector<double>& y, std::size_t factor) {
  std::vector<double> out;
  for (std::size_t start = 0; start < y.size(); start += factor) {
    double acc = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = start; i < y.size() && i < start + factor; ++i, ++cnt) acc += y[i];
    out.push_back(acc / static_cast<double>(cnt));
  }
  return out;
}

// Steady-state amplitude ratio of a cosine probe through `filter`.
template <typename Filter>
double sine_gain(Filter&& filter, double freq_hz, double fs, double seconds, double discard_seconds) {
  const auto n = static_cast<std::size_t>(seconds * fs);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::cos(2.0 * std::numbers::pi * freq_hz * static_cast<double>(i) / fs);
  const std::vector<double> y = filter(x);
  double peak = 0.0;
  for (std::size_t i = static_cast<std::size_t>(discard_seconds * fs); i < n; ++i) peak = std::max(peak, std::abs(y[i]));
  return peak;
}

}  // namespace oracle
