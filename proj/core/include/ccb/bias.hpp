#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <vector>

#include "ccb/dataset.hpp"

namespace ccb {

/// Entries of a bias vector at or below this threshold count as zero when
/// binarizing; absorbs float noise from normalization.
inline constexpr double kBinarizeThreshold = 1e-12;

/// Empirical answer prior per question type, estimated from a training split.
/// Immutable after construction; every row sums to 1.
struct BiasTable {
  Eigen::MatrixXd table;  // n_qtypes x |A|
  std::string source_split_name;
  double smoothing_epsilon = 0.0;
  std::vector<std::string> answers;     // column order, from the AnswerSpace
  std::vector<std::string> type_names;  // row order

  int n_qtypes() const { return static_cast<int>(table.rows()); }
  int n_answers() const { return static_cast<int>(table.cols()); }
};

/// Accumulates soft label mass per question type and normalizes each row to
/// sum 1. Types with no mass (absent from the split, epsilon = 0) get the
/// uniform row.
BiasTable estimate_bias(const Split& train, double smoothing_epsilon = 0.0);

/// Row lookup. Throws validation_error for an unknown qtype.
Eigen::VectorXd bias_for(const BiasTable& table, int qtype);
Eigen::VectorXd bias_for(const BiasTable& table, const std::string& qtype_name);

/// Elementwise indicator of strict positivity (above kBinarizeThreshold).
Eigen::VectorXd binarize(const Eigen::VectorXd& b);

/// Per-answer weights (1 - b_j)^r with the base clipped at 0.
/// Throws validation_error for r < 0.
Eigen::VectorXd reweight(const Eigen::VectorXd& b, double r);

void save_bias_table(const BiasTable& table, const std::filesystem::path& path);
BiasTable load_bias_table(const std::filesystem::path& path);

}  // namespace ccb
