#pragma once

// 1D signal kernels shared by the CNN forward and backward passes.
// Everything here is a free function over Eigen column vectors and is
// templated on the scalar type.

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <string>

#include "ppgstress/error.hpp"

namespace ppgstress {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using VectorXd = Vector<double>;

/// Sliding dot product without padding (no kernel flip):
///   out[n] = sum_m a[n + m] * b[m],  n = 0 .. len(a) - len(b).
template <typename DerivedA, typename DerivedB>
Vector<typename DerivedA::Scalar> conv1d_valid(const Eigen::MatrixBase<DerivedA>& a,
                                               const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  const Eigen::Index na = a.size();
  const Eigen::Index nb = b.size();
  if (nb == 0 || nb > na) {
    throw ShapeError("conv1d_valid: kernel length " + std::to_string(nb) +
                     " exceeds signal length " + std::to_string(na));
  }
  Vector<Scalar> out(na - nb + 1);
  for (Eigen::Index n = 0; n < out.size(); ++n) {
    out[n] = a.segment(n, nb).dot(b);
  }
  return out;
}

/// Zero-padded sliding dot product; output length len(a) + len(b) - 1.
/// The central len(a) - len(b) + 1 entries coincide with conv1d_valid.
template <typename DerivedA, typename DerivedB>
Vector<typename DerivedA::Scalar> conv1d_full(const Eigen::MatrixBase<DerivedA>& a,
                                              const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  const Eigen::Index na = a.size();
  const Eigen::Index nb = b.size();
  if (na == 0 || nb == 0) {
    throw ShapeError("conv1d_full: empty operand");
  }
  Vector<Scalar> out(na + nb - 1);
  for (Eigen::Index p = 0; p < out.size(); ++p) {
    // a index = p + m - (nb - 1), restricted to [0, na)
    const Eigen::Index m_lo = std::max<Eigen::Index>(0, nb - 1 - p);
    const Eigen::Index m_hi = std::min<Eigen::Index>(nb, na + nb - 1 - p);
    out[p] = a.segment(p + m_lo - (nb - 1), m_hi - m_lo).dot(b.segment(m_lo, m_hi - m_lo));
  }
  return out;
}

template <typename Derived>
Vector<typename Derived::Scalar> reverse(const Eigen::MatrixBase<Derived>& v) {
  return v.reverse();
}

/// Non-overlapping mean pooling by `factor`. A trailing partial block is
/// averaged over its actual length.
template <typename Derived>
Vector<typename Derived::Scalar> subsample(const Eigen::MatrixBase<Derived>& y, Eigen::Index factor) {
  using Scalar = typename Derived::Scalar;
  if (y.size() == 0) throw ShapeError("subsample: empty input");
  if (factor < 1) throw ShapeError("subsample: factor must be >= 1");
  const Eigen::Index blocks = (y.size() + factor - 1) / factor;
  Vector<Scalar> out(blocks);
  for (Eigen::Index j = 0; j < blocks; ++j) {
    const Eigen::Index start = j * factor;
    const Eigen::Index len = std::min(factor, y.size() - start);
    out[j] = y.segment(start, len).sum() / static_cast<Scalar>(len);
  }
  return out;
}

/// Adjoint of subsample: spreads each pooled value uniformly over its block,
/// divided by the block's actual length. `out_len` is the pre-pooling length.
template <typename Derived>
Vector<typename Derived::Scalar> upsample(const Eigen::MatrixBase<Derived>& pooled, Eigen::Index factor,
                                          Eigen::Index out_len) {
  using Scalar = typename Derived::Scalar;
  if (factor < 1) throw ShapeError("upsample: factor must be >= 1");
  if ((out_len + factor - 1) / factor != pooled.size()) {
    throw ShapeError("upsample: pooled length " + std::to_string(pooled.size()) +
                     " does not match output length " + std::to_string(out_len));
  }
  Vector<Scalar> out(out_len);
  for (Eigen::Index j = 0; j < pooled.size(); ++j) {
    const Eigen::Index start = j * factor;
    const Eigen::Index len = std::min(factor, out_len - start);
    out.segment(start, len).setConstant(pooled[j] / static_cast<Scalar>(len));
  }
  return out;
}

inline Eigen::Index pooled_length(Eigen::Index len, Eigen::Index factor) {
  return (len + factor - 1) / factor;
}

}  // namespace ppgstress
