#include "ccb/losses.hpp"

#include <cmath>

#include "ccb/bias.hpp"
#include "ccb/errors.hpp"
#include "ccb/mathfn.hpp"

namespace ccb {

namespace {

void check_scores_labels(const Eigen::MatrixXd& z, const Eigen::MatrixXd& y, const char* who) {
  if (z.rows() != y.rows() || z.cols() != y.cols())
    throw validation_error(std::string(who) + ": score/label shape mismatch");
  if (z.rows() < 1) throw validation_error(std::string(who) + ": empty batch");
  if (!z.allFinite()) throw validation_error(std::string(who) + ": non-finite scores");
  if (!(y.array() >= 0.0).all() || !(y.array() <= 1.0).all())
    throw validation_error(std::string(who) + ": labels must lie in [0, 1]");
}

// (1 - b)^r weights for one bias row.
Eigen::VectorXd row_weights(const Eigen::VectorXd& b, double r, ReweightMode mode) {
  if (mode == ReweightMode::per_answer) return reweight(b, r);
  const double w = std::pow(std::max(0.0, 1.0 - b.maxCoeff()), r);
  return Eigen::VectorXd::Constant(b.size(), w);
}

Eigen::MatrixXd context_labels(const Eigen::MatrixXd& b, bool use_context_label) {
  if (!use_context_label) return Eigen::MatrixXd::Ones(b.rows(), b.cols());
  Eigen::MatrixXd lab(b.rows(), b.cols());
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    lab.row(i) = binarize(b.row(i).transpose()).transpose();
  return lab;
}

}  // namespace

bool LossBreakdown::finite() const {
  if (l_ml && !std::isfinite(*l_ml)) return false;
  return std::isfinite(l_cn) && std::isfinite(l_cx) && std::isfinite(l_p) && std::isfinite(l_ccb);
}

double bce_with_logits(double z, double y) { return softplus(z) - y * z; }

double multilabel_bce(const Eigen::MatrixXd& z, const Eigen::MatrixXd& y) {
  check_scores_labels(z, y, "multilabel_bce");
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = 0; j < z.cols(); ++j) total += bce_with_logits(z(i, j), y(i, j));
  return total / static_cast<double>(z.rows());
}

double content_loss(const Eigen::MatrixXd& z_cn, const Eigen::MatrixXd& y,
                    const Eigen::MatrixXd& b, double r, ReweightMode mode) {
  check_scores_labels(z_cn, y, "content_loss");
  if (b.rows() != z_cn.rows() || b.cols() != z_cn.cols())
    throw validation_error("content_loss: bias shape mismatch");
  if (r < 0.0) throw validation_error("content_loss: r must be >= 0");
  double total = 0.0;
  for (Eigen::Index i = 0; i < z_cn.rows(); ++i) {
    const Eigen::VectorXd w = row_weights(b.row(i).transpose(), r, mode);
    for (Eigen::Index j = 0; j < z_cn.cols(); ++j)
      total += w(j) * bce_with_logits(z_cn(i, j), y(i, j));
  }
  return total / static_cast<double>(z_cn.rows());
}

double context_loss(const Eigen::MatrixXd& z_cx, const Eigen::MatrixXd& b,
                    bool use_context_label) {
  if (b.rows() != z_cx.rows() || b.cols() != z_cx.cols())
    throw validation_error("context_loss: bias shape mismatch");
  return multilabel_bce(z_cx, context_labels(b, use_context_label));
}

double predict_loss(const Eigen::MatrixXd& z_p, const Eigen::MatrixXd& y) {
  check_scores_labels(z_p, y, "predict_loss");
  return multilabel_bce(z_p, y);
}

LossBreakdown ccb_loss(const Eigen::MatrixXd& z_cn, const Eigen::MatrixXd& z_cx,
                       const Eigen::MatrixXd& z_p, const Eigen::MatrixXd& y,
                       const Eigen::MatrixXd& b, double r, ReweightMode mode,
                       bool use_context_label) {
  LossBreakdown out;
  out.batch_size = static_cast<int>(z_cn.rows());
  out.l_cn = content_loss(z_cn, y, b, r, mode);
  out.l_cx = context_loss(z_cx, b, use_context_label);
  out.l_p = predict_loss(z_p, y);
  out.l_ccb = out.l_cn + out.l_cx + out.l_p;
  return out;
}

Eigen::MatrixXd multilabel_bce_grad(const Eigen::MatrixXd& z, const Eigen::MatrixXd& y) {
  check_scores_labels(z, y, "multilabel_bce_grad");
  Eigen::MatrixXd g(z.rows(), z.cols());
  const double inv_n = 1.0 / static_cast<double>(z.rows());
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = 0; j < z.cols(); ++j) g(i, j) = inv_n * (sigmoid(z(i, j)) - y(i, j));
  return g;
}

Eigen::MatrixXd content_loss_grad(const Eigen::MatrixXd& z_cn, const Eigen::MatrixXd& y,
                                  const Eigen::MatrixXd& b, double r, ReweightMode mode) {
  if (r < 0.0) throw validation_error("content_loss_grad: r must be >= 0");
  Eigen::MatrixXd g = multilabel_bce_grad(z_cn, y);
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    const Eigen::VectorXd w = row_weights(b.row(i).transpose(), r, mode);
    g.row(i) = g.row(i).cwiseProduct(w.transpose());
  }
  return g;
}

Eigen::MatrixXd context_loss_grad(const Eigen::MatrixXd& z_cx, const Eigen::MatrixXd& b,
                                  bool use_context_label) {
  return multilabel_bce_grad(z_cx, context_labels(b, use_context_label));
}

Eigen::MatrixXd predict_loss_grad(const Eigen::MatrixXd& z_p, const Eigen::MatrixXd& y) {
  return multilabel_bce_grad(z_p, y);
}

}  // namespace ccb
