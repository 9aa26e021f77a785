#pragma once

// PPG conditioning: min-max normalisation to [-1, 1], centred moving average,
// and a Chebyshev type II band-pass realised as a cascade of biquads.

#include <Eigen/Core>

#include <cmath>
#include <complex>
#include <cstddef>
#include <iosfwd>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ppgstress/dataset.hpp"
#include "ppgstress/error.hpp"

namespace ppgstress {

struct NormalizationStats {
  double min = 0.0;
  double max = 0.0;
  std::string source;
};

NormalizationStats compute_stats(std::span<const double> signal, std::string source = {});

// x -> 2 (x - min) / (max - min) - 1. Samples outside [min, max] extrapolate
// linearly and are tallied in `out_of_range` when given.
std::vector<double> normalize(std::span<const double> signal, const NormalizationStats& stats,
                              std::size_t* out_of_range = nullptr);
std::vector<double> denormalize(std::span<const double> normalized, const NormalizationStats& stats);

// Centred mean over an odd window; edge samples average what is available.
std::vector<double> moving_average(std::span<const double> signal, std::size_t window);

/// One second-order section, a0 normalised to 1:
///   H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)
template <typename Scalar>
struct BiquadSection {
  Scalar b0{1}, b1{0}, b2{0}, a1{0}, a2{0};

  // Largest pole modulus.
  Scalar pole_radius() const {
    const std::complex<Scalar> disc = std::sqrt(std::complex<Scalar>(a1 * a1 - Scalar(4) * a2));
    const std::complex<Scalar> r1 = (-a1 + disc) / Scalar(2);
    const std::complex<Scalar> r2 = (-a1 - disc) / Scalar(2);
    return std::max(std::abs(r1), std::abs(r2));
  }

  bool stable() const { return pole_radius() < Scalar(1); }

  // Frequency response at `omega` rad/sample.
  std::complex<Scalar> response(Scalar omega) const {
    const std::complex<Scalar> z1 = std::polar(Scalar(1), -omega);
    const std::complex<Scalar> z2 = z1 * z1;
    return (b0 + b1 * z1 + b2 * z2) / (Scalar(1) + a1 * z1 + a2 * z2);
  }
};

enum class FilterKind { ChebyshevII };

struct FilterDesign {
  FilterKind kind = FilterKind::ChebyshevII;
  int order = 4;          // band-pass order; the low-pass prototype has order/2
  double low_hz = 0.5;    // -3 dB passband edges
  double high_hz = 8.0;
  double atten_db = 30.0; // minimum stopband attenuation
  double sample_rate_hz = 64.0;

  void validate() const;
  friend bool operator==(const FilterDesign&, const FilterDesign&) = default;
};

template <typename Scalar>
struct BiquadCascade {
  std::vector<BiquadSection<Scalar>> sections;
  FilterDesign design;

  bool stable() const {
    for (const auto& s : sections)
      if (!s.stable()) return false;
    return true;
  }

  std::complex<Scalar> response(Scalar omega) const {
    std::complex<Scalar> h{1};
    for (const auto& s : sections) h *= s.response(omega);
    return h;
  }

  Scalar magnitude_at_hz(Scalar hz) const {
    return std::abs(response(Scalar(2) * std::numbers::pi_v<Scalar> * hz / static_cast<Scalar>(design.sample_rate_hz)));
  }
};

// Frequencies (Hz) beyond which the design guarantees at least atten_db:
// attenuation holds for f <= first and f >= second.
std::pair<double, double> stopband_edges(const FilterDesign& design);

// Analog prototype -> band-pass -> bilinear (prewarped) -> second-order
// sections ordered by ascending pole radius. Throws NumericalError when a
// section ends up unstable.
BiquadCascade<double> design_chebyshev2(const FilterDesign& design);

// Causal direct-form-II-transposed pass; state starts at zero on every call.
template <typename Scalar>
std::vector<Scalar> apply_filter(const BiquadCascade<Scalar>& cascade, std::span<const Scalar> signal) {
  std::vector<Scalar> out(signal.begin(), signal.end());
  for (const auto& s : cascade.sections) {
    Scalar z1{0}, z2{0};
    for (std::size_t n = 0; n < out.size(); ++n) {
      const Scalar x = out[n];
      const Scalar y = s.b0 * x + z1;
      z1 = s.b1 * x - s.a1 * y + z2;
      z2 = s.b2 * x - s.a2 * y;
      if (!std::isfinite(y)) {
        throw NumericalError("non-finite filter output at sample " + std::to_string(n));
      }
      out[n] = y;
    }
  }
  return out;
}

// Expanded numerator and denominator polynomials in z^-1 of the whole cascade.
std::pair<Eigen::VectorXd, Eigen::VectorXd> cascade_polynomials(const BiquadCascade<double>& cascade);
std::complex<double> polynomial_response(const Eigen::VectorXd& b, const Eigen::VectorXd& a, double omega);

// key=value text: kind=cheby2, order=4, band=0.5,8, atten_db=30, fs=64
std::string serialize_design(const FilterDesign& design);
FilterDesign parse_design(const std::string& text);

// One section per line: b0 b1 b2 a1 a2 with 17 significant digits.
void write_coefficients(std::ostream& os, const BiquadCascade<double>& cascade);
std::vector<BiquadSection<double>> read_coefficients(std::istream& is);

struct PreprocessOptions {
  bool filtered = true;
  std::size_t ma_window = 5;
  FilterDesign design;
};

// normalize -> moving_average -> Chebyshev II when filtered, else normalize only.
// Labels and metadata pass through unchanged.
SubjectRecord preprocess(const SubjectRecord& record, const PreprocessOptions& options);

}  // namespace ppgstress
