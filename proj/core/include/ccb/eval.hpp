#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "ccb/bias.hpp"
#include "ccb/dataset.hpp"
#include "ccb/model.hpp"

namespace ccb {

/// Which score vector drives the prediction. auto_head picks the head the
/// checkpoint was trained for (ccb -> joint, lmh_baseline -> content,
/// ml_baseline -> base).
enum class EvalHead { auto_head, joint, content, base };

const char* to_string(EvalHead h);
EvalHead eval_head_from_string(const std::string& s);

struct EvalOptions {
  EvalHead head = EvalHead::auto_head;
  /// Needed when the checkpoint keeps the bias term at inference. Must not
  /// have been estimated from the split under evaluation.
  const BiasTable* bias = nullptr;
};

struct MetricsReport {
  double overall = 0.0;
  double yesno = 0.0;
  double number = 0.0;
  double other = 0.0;
  int n_yesno = 0;
  int n_number = 0;
  int n_other = 0;
  int n_evaluated = 0;
  /// overall(in-distribution split) - overall(shifted split); smaller is
  /// better. Only set once both evaluations exist.
  std::optional<double> gap;
  std::map<std::string, std::string> config_echo;
};

/// Soft credit of one prediction: the label score of the top-ranked answer.
/// Equals exact-match accuracy for hard one-hot labels.
double vqa_credit(const Eigen::VectorXd& scores, const Eigen::VectorXd& labels);

MetricsReport evaluate(const Checkpoint& ckpt, const Split& split, const EvalOptions& options = {});

double compute_gap(const MetricsReport& in_distribution, const MetricsReport& shifted);

void save_metrics_report(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport load_metrics_report(const std::filesystem::path& path);

}  // namespace ccb
