#pragma once

#include <Eigen/Core>

#include <optional>

namespace ccb {

/// How the (1 - b)^r factor is applied inside the content loss: per answer
/// entry (default) or as one scalar (1 - max_j b_j)^r per instance.
enum class ReweightMode { per_answer, per_instance_max };

/// The per-batch loss components. l_ccb is always the sum of l_cn, l_cx and
/// l_p in that accumulation order; l_ml is only set by the baseline
/// objectives.
struct LossBreakdown {
  std::optional<double> l_ml;
  double l_cn = 0.0;
  double l_cx = 0.0;
  double l_p = 0.0;
  double l_ccb = 0.0;
  int batch_size = 0;

  bool finite() const;
};

/// Stable binary cross-entropy on a raw score: softplus(z) - y * z.
double bce_with_logits(double z, double y);

/// All batch functions take one row per instance and reduce as mean over
/// instances, sum over answers. Labels outside [0, 1] raise validation_error.

double multilabel_bce(const Eigen::MatrixXd& z, const Eigen::MatrixXd& y);

/// BCE with each answer term weighted by (1 - b)^r. r < 0 raises
/// validation_error; r = 0 reduces exactly to multilabel_bce.
double content_loss(const Eigen::MatrixXd& z_cn, const Eigen::MatrixXd& y,
                    const Eigen::MatrixXd& b, double r,
                    ReweightMode mode = ReweightMode::per_answer);

/// BCE of the context scores against the binarized bias rows. When
/// `use_context_label` is false the label is the all-ones vector instead.
double context_loss(const Eigen::MatrixXd& z_cx, const Eigen::MatrixXd& b,
                    bool use_context_label = true);

double predict_loss(const Eigen::MatrixXd& z_p, const Eigen::MatrixXd& y);

/// Components plus their unweighted sum.
LossBreakdown ccb_loss(const Eigen::MatrixXd& z_cn, const Eigen::MatrixXd& z_cx,
                       const Eigen::MatrixXd& z_p, const Eigen::MatrixXd& y,
                       const Eigen::MatrixXd& b, double r,
                       ReweightMode mode = ReweightMode::per_answer,
                       bool use_context_label = true);

/// d loss / d scores for each of the above (already divided by the batch
/// size, matching the mean-over-instances reduction).
Eigen::MatrixXd multilabel_bce_grad(const Eigen::MatrixXd& z, const Eigen::MatrixXd& y);
Eigen::MatrixXd content_loss_grad(const Eigen::MatrixXd& z_cn, const Eigen::MatrixXd& y,
                                  const Eigen::MatrixXd& b, double r,
                                  ReweightMode mode = ReweightMode::per_answer);
Eigen::MatrixXd context_loss_grad(const Eigen::MatrixXd& z_cx, const Eigen::MatrixXd& b,
                                  bool use_context_label = true);
Eigen::MatrixXd predict_loss_grad(const Eigen::MatrixXd& z_p, const Eigen::MatrixXd& y);

}  // namespace ccb
