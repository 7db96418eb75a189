#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace ccb {

enum class QtypeCategory { yesno, number, other };

const char* to_string(QtypeCategory c);
QtypeCategory qtype_category_from_string(const std::string& s);

/// Canonical ordered candidate answer set. The position of an answer in
/// `answers` is the answer id used everywhere downstream.
struct AnswerSpace {
  std::vector<std::string> answers;

  int size() const { return static_cast<int>(answers.size()); }
  int index_of(const std::string& name) const;

  /// Throws validation_error unless ids are unique and size >= 2.
  void validate() const;

  bool operator==(const AnswerSpace&) const = default;
};

struct QuestionTypeTable {
  std::vector<std::string> type_names;
  std::vector<QtypeCategory> categories;  // parallel to type_names

  int size() const { return static_cast<int>(type_names.size()); }
  int index_of(const std::string& name) const;
  QtypeCategory category(int qtype) const;

  void validate() const;

  bool operator==(const QuestionTypeTable&) const = default;
};

/// One training example: region features, a tokenized question, its question
/// type and soft answer scores over the full answer space.
struct Instance {
  Eigen::MatrixXd image_features;  // regions x d_v, one region per row
  std::vector<int> question_tokens;
  int qtype = 0;
  Eigen::VectorXd labels;  // length |A|, entries in [0, 1]

  bool operator==(const Instance& o) const;
};

struct Split {
  std::string split_name;  // "train" or "test"
  AnswerSpace answer_space;
  QuestionTypeTable qtype_table;
  int regions = 0;
  int d_v = 0;
  int vocab_size = 0;
  std::vector<Instance> instances;

  void validate() const;

  bool operator==(const Split& o) const;
};

enum class ShiftMode { inverted, uniform };

const char* to_string(ShiftMode m);
ShiftMode shift_mode_from_string(const std::string& s);

/// Generator recipe. The train split draws each question type's answer from a
/// categorical prior with `skew` mass on one designated majority answer; the
/// test split either moves that majority to a different answer (inverted) or
/// flattens the prior (uniform). Everything is a pure function of `seed`.
struct ShiftSpec {
  int n_train = 5000;
  int n_test = 1000;
  int n_qtypes = 8;
  int n_answers_per_type = 4;
  double skew = 0.9;
  ShiftMode shift_mode = ShiftMode::inverted;
  int regions = 6;
  int d_v = 36;
  int vocab_size = 64;
  bool soft_labels = false;
  std::uint64_t seed = 0;

  int n_answers() const { return n_qtypes * n_answers_per_type; }

  /// Throws validation_error naming the offending field.
  void validate() const;
};

/// Fixed orthogonal code vectors derived from the spec: one unit code per
/// answer plus a shared marker direction that tags the signal region. The
/// ground-truth answer of every generated instance is recoverable from the
/// single region carrying the marker.
struct SignalCodebook {
  Eigen::MatrixXd codes;   // |A| x d_v, orthonormal rows
  Eigen::VectorXd marker;  // d_v, orthonormal to every code
};

SignalCodebook signal_codebook(const ShiftSpec& spec);

std::pair<Split, Split> generate_toy_dataset(const ShiftSpec& spec);

void save_split(const Split& split, const std::filesystem::path& path);
Split load_split(const std::filesystem::path& path);

struct DatasetStats {
  /// Per-qtype counts of the max-label answer; row t sums to the number of
  /// instances of type t.
  Eigen::MatrixXi answer_histogram;
  std::map<QtypeCategory, int> category_counts;
};

DatasetStats dataset_stats(const Split& split);

/// Index of the first maximal label entry.
int max_label_answer(const Instance& inst);

}  // namespace ccb
