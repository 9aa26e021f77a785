#include "ppgstress/dsp.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

namespace ppgstress {

using cplx = std::complex<double>;

NormalizationStats compute_stats(std::span<const double> signal, std::string source) {
  if (signal.size() < 2) throw ValidationError("normalization needs at least two samples");
  const auto [lo, hi] = std::minmax_element(signal.begin(), signal.end());
  if (!(*hi > *lo)) throw ValidationError("constant signal cannot be normalized");
  return {*lo, *hi, std::move(source)};
}

std::vector<double> normalize(std::span<const double> signal, const NormalizationStats& stats,
                              std::size_t* out_of_range) {
  if (!(stats.max > stats.min)) throw ValidationError("invalid normalization stats (max <= min)");
  const double scale = 2.0 / (stats.max - stats.min);
  std::vector<double> out(signal.size());
  std::size_t outside = 0;
  for (std::size_t i = 0; i < signal.size(); ++i) {
    const double x = signal[i];
    if (x < stats.min || x > stats.max) ++outside;
    out[i] = (x - stats.min) * scale - 1.0;
  }
  if (out_of_range) *out_of_range = outside;
  return out;
}

std::vector<double> denormalize(std::span<const double> normalized, const NormalizationStats& stats) {
  const double half_range = 0.5 * (stats.max - stats.min);
  std::vector<double> out(normalized.size());
  for (std::size_t i = 0; i < normalized.size(); ++i) out[i] = (normalized[i] + 1.0) * half_range + stats.min;
  return out;
}

std::vector<double> moving_average(std::span<const double> signal, std::size_t window) {
  if (window < 1 || window % 2 == 0) throw ValidationError("moving-average window must be odd and >= 1");
  if (window > signal.size()) throw ValidationError("moving-average window longer than the signal");
  const std::size_t half = window / 2;
  const std::size_t n = signal.size();

  // prefix[i] = sum of signal[0, i)
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + signal[i];

  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(n, i + half + 1);
    if (hi - lo == window) {
      // Direct sum in the interior; prefix differences lose bits on long records.
      double acc = 0.0;
      for (std::size_t j = lo; j < hi; ++j) acc += signal[j];
      out[i] = acc / static_cast<double>(window);
    } else {
      out[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Chebyshev II design

void FilterDesign::validate() const {
  if (order < 2 || order % 2 != 0) throw ValidationError("filter order must be even and >= 2");
  if (!(sample_rate_hz > 0.0)) throw ValidationError("sample rate must be positive");
  if (!(low_hz > 0.0 && low_hz < high_hz && high_hz < sample_rate_hz / 2.0)) {
    throw ValidationError("band edges must satisfy 0 < low < high < fs/2");
  }
  // The -3 dB passband edge only exists for attenuations above 3 dB.
  if (!(atten_db > 3.02)) throw ValidationError("stopband attenuation must exceed 3.02 dB");
}

namespace {

struct Zpk {
  std::vector<cplx> zeros;
  std::vector<cplx> poles;
  double gain = 1.0;
};

double ripple_epsilon(double atten_db) { return 1.0 / std::sqrt(std::pow(10.0, 0.1 * atten_db) - 1.0); }

// Prototype -3 dB frequency when the stopband edge sits at 1 rad/s.
double half_power_frequency(int n, double atten_db) {
  return 1.0 / std::cosh(std::acosh(1.0 / ripple_epsilon(atten_db)) / n);
}

// Inverse-Chebyshev low-pass prototype, stopband edge at 1 rad/s.
Zpk chebyshev2_prototype(int n, double atten_db) {
  const double eps = ripple_epsilon(atten_db);
  const double mu = std::asinh(1.0 / eps) / n;
  Zpk proto;
  for (int m = -n + 1; m < n; m += 2) {
    if (m == 0) continue;  // odd orders: the middle zero lies at infinity
    proto.zeros.emplace_back(0.0, 1.0 / std::sin(m * std::numbers::pi / (2.0 * n)));
  }
  for (int m = -n + 1; m < n; m += 2) {
    const cplx unit = -std::exp(cplx(0.0, std::numbers::pi * m / (2.0 * n)));
    const cplx p(std::sinh(mu) * unit.real(), std::cosh(mu) * unit.imag());
    proto.poles.push_back(1.0 / p);
  }
  cplx num(1.0), den(1.0);
  for (const auto& p : proto.poles) num *= -p;
  for (const auto& z : proto.zeros) den *= -z;
  proto.gain = (num / den).real();
  return proto;
}

double prewarp(double hz, double fs) { return 2.0 * fs * std::tan(std::numbers::pi * hz / fs); }

Zpk lowpass_to_bandpass(const Zpk& lp, double center, double bandwidth) {
  Zpk bp;
  const auto expand = [&](const std::vector<cplx>& roots, std::vector<cplx>& out) {
    for (const auto& r : roots) {
      const cplx half = r * bandwidth / 2.0;
      const cplx disc = std::sqrt(half * half - center * center);
      out.push_back(half + disc);
      out.push_back(half - disc);
    }
  };
  expand(lp.zeros, bp.zeros);
  expand(lp.poles, bp.poles);
  const std::size_t degree = lp.poles.size() - lp.zeros.size();
  for (std::size_t i = 0; i < degree; ++i) bp.zeros.emplace_back(0.0, 0.0);
  bp.gain = lp.gain * std::pow(bandwidth, static_cast<double>(degree));
  return bp;
}

Zpk bilinear(const Zpk& analog, double fs) {
  const double fs2 = 2.0 * fs;
  Zpk digital;
  cplx num(1.0), den(1.0);
  for (const auto& z : analog.zeros) {
    digital.zeros.push_back((fs2 + z) / (fs2 - z));
    num *= fs2 - z;
  }
  for (const auto& p : analog.poles) {
    digital.poles.push_back((fs2 + p) / (fs2 - p));
    den *= fs2 - p;
  }
  // Zeros at infinity land on Nyquist.
  for (std::size_t i = analog.zeros.size(); i < analog.poles.size(); ++i) digital.zeros.emplace_back(-1.0, 0.0);
  digital.gain = analog.gain * (num / den).real();
  return digital;
}

// Splits roots into conjugate pairs (upper half-plane member kept) and reals.
void separate_roots(const std::vector<cplx>& roots, std::vector<cplx>& complex_upper, std::vector<double>& reals) {
  constexpr double tol = 1e-10;
  for (const auto& r : roots) {
    if (std::abs(r.imag()) <= tol * std::max(1.0, std::abs(r))) {
      reals.push_back(r.real());
    } else if (r.imag() > 0.0) {
      complex_upper.push_back(r);
    }
  }
}

struct RootPair {
  // monic quadratic z^2 + c1 z + c2 -> coefficients in z^-1: 1, c1, c2
  double c1 = 0.0;
  double c2 = 0.0;
  cplx representative;
};

RootPair complex_pair(cplx r) { return {-2.0 * r.real(), std::norm(r), r}; }
RootPair real_pair(double r1, double r2) { return {-(r1 + r2), r1 * r2, cplx(std::abs(r1) > std::abs(r2) ? r1 : r2)}; }

std::vector<RootPair> pair_poles(const std::vector<cplx>& poles) {
  std::vector<cplx> upper;
  std::vector<double> reals;
  separate_roots(poles, upper, reals);
  if (reals.size() % 2 != 0) throw NumericalError("pole set has an unpaired real pole");
  std::vector<RootPair> pairs;
  for (const auto& p : upper) pairs.push_back(complex_pair(p));
  std::sort(reals.begin(), reals.end());
  for (std::size_t i = 0; i + 1 < reals.size(); i += 2) pairs.push_back(real_pair(reals[i], reals[i + 1]));
  return pairs;
}

}  // namespace

std::pair<double, double> stopband_edges(const FilterDesign& design) {
  design.validate();
  const int n = design.order / 2;
  const double fs = design.sample_rate_hz;
  const double w1 = prewarp(design.low_hz, fs);
  const double w2 = prewarp(design.high_hz, fs);
  const double center_sq = w1 * w2;
  const double bw = w2 - w1;
  // Stopband edge of the prototype once its -3 dB point is moved to 1 rad/s.
  const double ws = 1.0 / half_power_frequency(n, design.atten_db);
  const double w_hi = 0.5 * (ws * bw + std::sqrt(ws * ws * bw * bw + 4.0 * center_sq));
  const double w_lo = center_sq / w_hi;
  const auto to_hz = [fs](double w) { return fs / std::numbers::pi * std::atan(w / (2.0 * fs)); };
  return {to_hz(w_lo), to_hz(w_hi)};
}

BiquadCascade<double> design_chebyshev2(const FilterDesign& design) {
  design.validate();
  const int n = design.order / 2;
  const double fs = design.sample_rate_hz;

  Zpk proto = chebyshev2_prototype(n, design.atten_db);
  // Move the prototype's -3 dB point to 1 rad/s.
  const double wp = half_power_frequency(n, design.atten_db);
  for (auto& z : proto.zeros) z /= wp;
  for (auto& p : proto.poles) p /= wp;
  proto.gain *= std::pow(1.0 / wp, static_cast<double>(proto.poles.size() - proto.zeros.size()));

  const double w1 = prewarp(design.low_hz, fs);
  const double w2 = prewarp(design.high_hz, fs);
  const double center = std::sqrt(w1 * w2);
  const Zpk digital = bilinear(lowpass_to_bandpass(proto, center, w2 - w1), fs);

  std::vector<RootPair> pole_pairs = pair_poles(digital.poles);

  std::vector<cplx> zero_upper;
  std::vector<double> zero_reals;
  separate_roots(digital.zeros, zero_upper, zero_reals);

  // Poles nearest the unit circle pick their nearest zeros first.
  std::sort(pole_pairs.begin(), pole_pairs.end(), [](const RootPair& a, const RootPair& b) {
    return std::abs(a.representative) > std::abs(b.representative);
  });

  std::vector<BiquadSection<double>> sections;
  for (const auto& pp : pole_pairs) {
    const cplx p = pp.representative;
    double best_complex = std::numeric_limits<double>::infinity();
    std::size_t best_ci = 0;
    for (std::size_t i = 0; i < zero_upper.size(); ++i) {
      const double d = std::min(std::abs(zero_upper[i] - p), std::abs(std::conj(zero_upper[i]) - p));
      if (d < best_complex) {
        best_complex = d;
        best_ci = i;
      }
    }
    // Nearest two real zeros.
    std::sort(zero_reals.begin(), zero_reals.end(),
              [&](double a, double b) { return std::abs(cplx(a) - p) < std::abs(cplx(b) - p); });
    const double best_real = zero_reals.size() >= 2 ? std::abs(cplx(zero_reals[0]) - p)
                                                    : std::numeric_limits<double>::infinity();

    RootPair zp;
    if (best_complex <= best_real && !zero_upper.empty()) {
      zp = complex_pair(zero_upper[best_ci]);
      zero_upper.erase(zero_upper.begin() + static_cast<std::ptrdiff_t>(best_ci));
    } else if (zero_reals.size() >= 2) {
      zp = real_pair(zero_reals[0], zero_reals[1]);
      zero_reals.erase(zero_reals.begin(), zero_reals.begin() + 2);
    } else {
      throw NumericalError("zero/pole pairing failed");
    }
    sections.push_back({1.0, zp.c1, zp.c2, pp.c1, pp.c2});
  }

  // Unit magnitude per section at the passband centre; the sign of the
  // overall gain goes to the first section.
  const double omega_c = 2.0 * std::atan(center / (2.0 * fs));
  for (auto& s : sections) {
    const double g = std::abs(s.response(omega_c));
    s.b0 /= g;
    s.b1 /= g;
    s.b2 /= g;
  }

  std::sort(sections.begin(), sections.end(),
            [](const auto& a, const auto& b) { return a.pole_radius() < b.pole_radius(); });
  if (digital.gain < 0.0 && !sections.empty()) {
    sections.front().b0 = -sections.front().b0;
    sections.front().b1 = -sections.front().b1;
    sections.front().b2 = -sections.front().b2;
  }

  for (const auto& s : sections) {
    const double r = s.pole_radius();
    if (!(r < 1.0)) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "unstable section after transform: pole modulus %.17g", r);
      throw NumericalError(buf);
    }
  }
  return {std::move(sections), design};
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> cascade_polynomials(const BiquadCascade<double>& cascade) {
  Eigen::VectorXd b = Eigen::VectorXd::Ones(1);
  Eigen::VectorXd a = Eigen::VectorXd::Ones(1);
  const auto multiply = [](const Eigen::VectorXd& p, const Eigen::Vector3d& q) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(p.size() + 2);
    for (Eigen::Index i = 0; i < p.size(); ++i) out.segment(i, 3) += p[i] * q;
    return out;
  };
  for (const auto& s : cascade.sections) {
    b = multiply(b, Eigen::Vector3d(s.b0, s.b1, s.b2));
    a = multiply(a, Eigen::Vector3d(1.0, s.a1, s.a2));
  }
  return {b, a};
}

std::complex<double> polynomial_response(const Eigen::VectorXd& b, const Eigen::VectorXd& a, double omega) {
  using lcplx = std::complex<long double>;
  const auto eval = [omega](const Eigen::VectorXd& c) {
    lcplx acc(0.0L);
    for (Eigen::Index k = 0; k < c.size(); ++k)
      acc += static_cast<long double>(c[k]) * std::polar(1.0L, -static_cast<long double>(omega) * k);
    return acc;
  };
  const lcplx h = eval(b) / eval(a);
  return {static_cast<double>(h.real()), static_cast<double>(h.imag())};
}

// ---------------------------------------------------------------------------
// Serialisation

namespace {

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_real(const std::string& text, const std::string& key) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw ValidationError("bad value for " + key + ": '" + text + "'");
  return v;
}

}  // namespace

std::string serialize_design(const FilterDesign& design) {
  std::ostringstream os;
  os << "kind=cheby2\n"
     << "order=" << design.order << '\n'
     << "band=" << format_real(design.low_hz) << ',' << format_real(design.high_hz) << '\n'
     << "atten_db=" << format_real(design.atten_db) << '\n'
     << "fs=" << format_real(design.sample_rate_hz) << '\n';
  return os.str();
}

FilterDesign parse_design(const std::string& text) {
  FilterDesign design;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("malformed design line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "kind") {
      if (value != "cheby2") throw ValidationError("unsupported filter kind: " + value);
      design.kind = FilterKind::ChebyshevII;
    } else if (key == "order") {
      design.order = static_cast<int>(parse_real(value, key));
    } else if (key == "band") {
      const auto comma = value.find(',');
      if (comma == std::string::npos) throw ValidationError("band needs two comma-separated edges");
      design.low_hz = parse_real(value.substr(0, comma), key);
      design.high_hz = parse_real(value.substr(comma + 1), key);
    } else if (key == "atten_db") {
      design.atten_db = parse_real(value, key);
    } else if (key == "fs") {
      design.sample_rate_hz = parse_real(value, key);
    } else {
      throw ValidationError("unknown design key: " + key);
    }
  }
  design.validate();
  return design;
}

void write_coefficients(std::ostream& os, const BiquadCascade<double>& cascade) {
  for (const auto& s : cascade.sections) {
    os << format_real(s.b0) << ' ' << format_real(s.b1) << ' ' << format_real(s.b2) << ' ' << format_real(s.a1)
       << ' ' << format_real(s.a2) << '\n';
  }
}

std::vector<BiquadSection<double>> read_coefficients(std::istream& is) {
  std::vector<BiquadSection<double>> sections;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    BiquadSection<double> s;
    if (!(ls >> s.b0 >> s.b1 >> s.b2 >> s.a1 >> s.a2)) throw ValidationError("malformed coefficient line: " + line);
    sections.push_back(s);
  }
  return sections;
}

SubjectRecord preprocess(const SubjectRecord& record, const PreprocessOptions& options) {
  SubjectRecord out = record;
  const auto stats = compute_stats(record.ppg, "subject " + std::to_string(record.subject_id));
  out.ppg = normalize(record.ppg, stats);
  if (!options.filtered) return out;
  out.ppg = moving_average(out.ppg, options.ma_window);
  FilterDesign design = options.design;
  design.sample_rate_hz = record.ppg_rate_hz;
  const auto cascade = design_chebyshev2(design);
  out.ppg = apply_filter<double>(cascade, out.ppg);
  return out;
}

}  // namespace ppgstress
