#pragma once

#include <cmath>
#include <utility>

#include <Eigen/Dense>

#include "linpo/errors.hpp"

namespace linpo {

inline constexpr double kLn2 = 0.6931471805599453;

/// Frozen copy of an accumulator taken at an epoch boundary: the log
/// determinant and the inverse at snapshot time. The inverse is a deep
/// copy, so later updates to the live accumulator do not leak into it.
struct CovarianceSnapshot {
  double log_det = 0.0;
  Eigen::MatrixXd inv;

  double mahalanobis_inv(const Eigen::VectorXd& v) const {
    return std::sqrt(std::max(0.0, v.dot(inv * v)));
  }

  /// Symmetric PSD square root of the stored inverse.
  Eigen::MatrixXd inv_sqrt() const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inv);
    if (es.info() != Eigen::Success)
      throw NumericalError("covariance snapshot: eigendecomposition failed");
    Eigen::VectorXd roots = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
  }
};

/// Regularized covariance Lambda = I + sum v v^T with an incrementally
/// maintained inverse and log determinant.
///
/// Rank-1 updates keep the inverse via the Sherman-Morrison identity and
/// the log determinant via the matrix determinant lemma. A full
/// eigendecomposition refresh runs every 512 updates, and before any
/// determinant-doubling decision that falls within 1e-6 of the threshold,
/// which keeps drift below the documented invariants.
class CovarianceAccumulator {
 public:
  explicit CovarianceAccumulator(int dim) : dim_(dim) {
    if (dim < 1) throw std::invalid_argument("CovarianceAccumulator: dim must be >= 1");
    lambda_ = Eigen::MatrixXd::Identity(dim, dim);
    inv_ = Eigen::MatrixXd::Identity(dim, dim);
  }

  int dim() const { return dim_; }
  long count() const { return count_; }
  double log_det() const { return log_det_; }
  const Eigen::MatrixXd& lambda() const { return lambda_; }
  const Eigen::MatrixXd& lambda_inv() const { return inv_; }

  /// Adds v v^T.
  void update(const Eigen::VectorXd& v) {
    check_dim(v);
    const Eigen::VectorXd w = inv_ * v;
    const double q = v.dot(w);  // >= 0 since inv is PD
    log_det_ += std::log1p(std::max(q, 0.0));
    inv_.noalias() -= (w * w.transpose()) / (1.0 + q);
    lambda_.noalias() += v * v.transpose();
    ++count_;
    if (count_ % kRefreshCadence == 0) refresh();
  }

  /// ||v||_{Lambda^{-1}}; in [0, ||v||] because Lambda >= I.
  double mahalanobis_inv(const Eigen::VectorXd& v) const {
    check_dim(v);
    return std::sqrt(std::max(0.0, v.dot(inv_ * v)));
  }

  /// ||v||_{Lambda}; always >= ||v||.
  double mahalanobis(const Eigen::VectorXd& v) const {
    check_dim(v);
    return std::sqrt(std::max(0.0, v.dot(lambda_ * v)));
  }

  /// Whether det(Lambda) >= 2 * exp(snapshot_log_det), inclusive at the
  /// boundary. Refreshes first when the decision is within 1e-6 of the
  /// threshold so drift cannot flip it.
  bool det_doubled(double snapshot_log_det) {
    if (snapshot_log_det > log_det_ + 1e-9)
      throw std::invalid_argument("det_doubled: snapshot is newer than the accumulator");
    if (std::abs(log_det_ - (snapshot_log_det + kLn2)) < 1e-6) refresh();
    return log_det_ >= snapshot_log_det + kLn2 - 1e-12;
  }

  /// Recomputes the inverse and log determinant from Lambda by a full
  /// symmetric factorization.
  void refresh() {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lambda_);
    if (es.info() != Eigen::Success)
      throw NumericalError("covariance refresh: eigendecomposition failed");
    const Eigen::VectorXd& ev = es.eigenvalues();
    if (ev.minCoeff() < 1e-9)
      throw NumericalError("covariance refresh: matrix lost positive definiteness");
    inv_ = es.eigenvectors() * ev.cwiseInverse().asDiagonal() *
           es.eigenvectors().transpose();
    log_det_ = ev.array().log().sum();
  }

  CovarianceSnapshot snapshot() const { return {log_det_, inv_}; }

 private:
  void check_dim(const Eigen::VectorXd& v) const {
    if (v.size() != dim_)
      throw std::invalid_argument("CovarianceAccumulator: dimension mismatch");
  }

  static constexpr long kRefreshCadence = 512;

  int dim_;
  long count_ = 0;
  double log_det_ = 0.0;
  Eigen::MatrixXd lambda_;
  Eigen::MatrixXd inv_;
};

}  // namespace linpo
