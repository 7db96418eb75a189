#include "ccb/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ccb/errors.hpp"
#include "ccb/rng.hpp"
#include "ccb/version.hpp"

namespace ccb {

using nlohmann::json;

namespace {

// Signal-region construction constants. The marker amplitude only has to beat
// zero: distractor noise is projected off the marker direction, so marker
// detection is exact rather than statistical.
constexpr double kCodeScale = 2.0;
constexpr double kMarkerScale = 2.0;
constexpr double kNoiseSigma = 0.5;

constexpr double kSoftGtLevels[] = {0.9, 1.0};
constexpr double kSoftDistractorLevels[] = {0.3, 0.6};

}  // namespace

const char* to_string(QtypeCategory c) {
  switch (c) {
    case QtypeCategory::yesno: return "yesno";
    case QtypeCategory::number: return "number";
    case QtypeCategory::other: return "other";
  }
  return "other";
}

QtypeCategory qtype_category_from_string(const std::string& s) {
  if (s == "yesno") return QtypeCategory::yesno;
  if (s == "number") return QtypeCategory::number;
  if (s == "other") return QtypeCategory::other;
  throw validation_error("unknown question-type category: '" + s + "'");
}

const char* to_string(ShiftMode m) {
  return m == ShiftMode::inverted ? "inverted" : "uniform";
}

ShiftMode shift_mode_from_string(const std::string& s) {
  if (s == "inverted") return ShiftMode::inverted;
  if (s == "uniform") return ShiftMode::uniform;
  throw validation_error("unknown shift_mode: '" + s + "'");
}

int AnswerSpace::index_of(const std::string& name) const {
  auto it = std::find(answers.begin(), answers.end(), name);
  return it == answers.end() ? -1 : static_cast<int>(it - answers.begin());
}

void AnswerSpace::validate() const {
  if (answers.size() < 2) throw validation_error("AnswerSpace: need at least 2 answers");
  std::set<std::string> seen(answers.begin(), answers.end());
  if (seen.size() != answers.size())
    throw validation_error("AnswerSpace: answer identifiers must be unique");
}

int QuestionTypeTable::index_of(const std::string& name) const {
  auto it = std::find(type_names.begin(), type_names.end(), name);
  return it == type_names.end() ? -1 : static_cast<int>(it - type_names.begin());
}

QtypeCategory QuestionTypeTable::category(int qtype) const {
  if (qtype < 0 || qtype >= size())
    throw validation_error("QuestionTypeTable: qtype index out of range");
  return categories[static_cast<std::size_t>(qtype)];
}

void QuestionTypeTable::validate() const {
  if (type_names.empty()) throw validation_error("QuestionTypeTable: need at least 1 type");
  if (type_names.size() != categories.size())
    throw validation_error("QuestionTypeTable: every type needs exactly one category");
  std::set<std::string> seen(type_names.begin(), type_names.end());
  if (seen.size() != type_names.size())
    throw validation_error("QuestionTypeTable: type identifiers must be unique");
}

bool Instance::operator==(const Instance& o) const {
  return qtype == o.qtype && question_tokens == o.question_tokens &&
         labels.size() == o.labels.size() && labels == o.labels &&
         image_features.rows() == o.image_features.rows() &&
         image_features.cols() == o.image_features.cols() &&
         image_features == o.image_features;
}

bool Split::operator==(const Split& o) const {
  return split_name == o.split_name && answer_space == o.answer_space &&
         qtype_table == o.qtype_table && regions == o.regions && d_v == o.d_v &&
         vocab_size == o.vocab_size && instances == o.instances;
}

void Split::validate() const {
  answer_space.validate();
  qtype_table.validate();
  if (instances.empty()) throw validation_error("Split: must be non-empty");
  if (regions <= 0 || d_v <= 0) throw validation_error("Split: regions and d_v must be positive");
  const int n_answers = answer_space.size();
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const Instance& inst = instances[i];
    const std::string where = "Split: instance " + std::to_string(i);
    if (inst.qtype < 0 || inst.qtype >= qtype_table.size())
      throw validation_error(where + ": qtype not in QuestionTypeTable");
    if (inst.labels.size() != n_answers)
      throw validation_error(where + ": label vector length != answer space size");
    if (!(inst.labels.array() >= 0.0).all() || !(inst.labels.array() <= 1.0).all())
      throw validation_error(where + ": labels must lie in [0, 1]");
    if (inst.labels.maxCoeff() <= 0.0)
      throw validation_error(where + ": at least one label entry must be > 0");
    if (inst.image_features.rows() != regions || inst.image_features.cols() != d_v)
      throw validation_error(where + ": image_features must be regions x d_v");
    if (!inst.image_features.allFinite())
      throw validation_error(where + ": image_features must be finite");
    if (inst.question_tokens.empty()) throw validation_error(where + ": empty question");
    for (int tok : inst.question_tokens)
      if (tok < 0 || tok >= vocab_size)
        throw validation_error(where + ": question token outside vocabulary");
  }
}

void ShiftSpec::validate() const {
  if (n_train <= 0) throw validation_error("ShiftSpec.n_train: must be > 0");
  if (n_test <= 0) throw validation_error("ShiftSpec.n_test: must be > 0");
  if (n_qtypes < 1) throw validation_error("ShiftSpec.n_qtypes: must be >= 1");
  if (n_answers_per_type < 2) throw validation_error("ShiftSpec.n_answers_per_type: must be >= 2");
  const double uniform_mass = 1.0 / n_answers_per_type;
  if (skew < uniform_mass - 1e-12 || skew > 1.0)
    throw validation_error("ShiftSpec.skew: must lie in [1/n_answers_per_type, 1]");
  if (regions < 1) throw validation_error("ShiftSpec.regions: must be >= 1");
  if (d_v < n_answers() + 1)
    throw validation_error("ShiftSpec.d_v: must be >= n_qtypes*n_answers_per_type + 1 to fit the signal codebook");
  if (vocab_size <= n_qtypes)
    throw validation_error("ShiftSpec.vocab_size: must exceed n_qtypes (type keywords plus filler)");
}

SignalCodebook signal_codebook(const ShiftSpec& spec) {
  spec.validate();
  const int n = spec.n_answers() + 1;  // answer codes plus the marker
  // Derived stream so the codebook is reconstructable without replaying
  // instance generation.
  Rng rng(spec.seed ^ 0xc0deb00cULL);
  Eigen::MatrixXd basis(n, spec.d_v);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < spec.d_v; ++j) basis(i, j) = rng.normal();
  // Modified Gram-Schmidt; d_v >= n so the rows stay independent in practice.
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < i; ++k) basis.row(i) -= basis.row(i).dot(basis.row(k)) * basis.row(k);
    basis.row(i).normalize();
  }
  SignalCodebook book;
  book.codes = basis.topRows(n - 1);
  book.marker = basis.row(n - 1).transpose();
  return book;
}

namespace {

std::vector<double> type_prior(int majority, int k, double skew) {
  std::vector<double> p(static_cast<std::size_t>(k), (1.0 - skew) / (k - 1));
  p[static_cast<std::size_t>(majority)] = skew;
  return p;
}

Split generate_split(const ShiftSpec& spec, const std::string& name, int n,
                     const std::vector<std::vector<double>>& priors, const AnswerSpace& space,
                     const QuestionTypeTable& types, const SignalCodebook& book, Rng& rng) {
  Split split;
  split.split_name = name;
  split.answer_space = space;
  split.qtype_table = types;
  split.regions = spec.regions;
  split.d_v = spec.d_v;
  split.vocab_size = spec.vocab_size;
  split.instances.reserve(static_cast<std::size_t>(n));

  const int k = spec.n_answers_per_type;
  const Eigen::VectorXd marker_dir = book.marker;  // unit norm by construction
  for (int i = 0; i < n; ++i) {
    Instance inst;
    const int t = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(spec.n_qtypes)));
    const int j = static_cast<int>(rng.categorical(priors[static_cast<std::size_t>(t)]));
    const int answer = t * k + j;
    inst.qtype = t;

    // Question: one type keyword plus 3..7 filler tokens.
    const int fillers = 3 + static_cast<int>(rng.uniform_index(5));
    inst.question_tokens.push_back(t);
    for (int f = 0; f < fillers; ++f) {
      const int tok = spec.n_qtypes + static_cast<int>(rng.uniform_index(
                                          static_cast<std::size_t>(spec.vocab_size - spec.n_qtypes)));
      inst.question_tokens.push_back(tok);
    }

    // Regions: one signal row carrying the answer code plus the marker,
    // the rest noise with its marker component removed.
    const int signal_row = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(spec.regions)));
    inst.image_features.resize(spec.regions, spec.d_v);
    for (int r = 0; r < spec.regions; ++r) {
      if (r == signal_row) {
        inst.image_features.row(r) =
            kCodeScale * book.codes.row(answer) + kMarkerScale * marker_dir.transpose();
      } else {
        Eigen::VectorXd noise(spec.d_v);
        for (int c = 0; c < spec.d_v; ++c) noise(c) = rng.normal(0.0, kNoiseSigma);
        noise -= noise.dot(marker_dir) * marker_dir;
        inst.image_features.row(r) = noise.transpose();
      }
    }

    inst.labels = Eigen::VectorXd::Zero(space.size());
    if (spec.soft_labels) {
      inst.labels(answer) = kSoftGtLevels[rng.uniform_index(2)];
      if (rng.uniform01() < 0.5) {
        const int j2 = (j + 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(k - 1)))) % k;
        inst.labels(t * k + j2) = kSoftDistractorLevels[rng.uniform_index(2)];
      }
    } else {
      inst.labels(answer) = 1.0;
    }
    split.instances.push_back(std::move(inst));
  }
  return split;
}

}  // namespace

std::pair<Split, Split> generate_toy_dataset(const ShiftSpec& spec) {
  spec.validate();
  const int k = spec.n_answers_per_type;

  AnswerSpace space;
  QuestionTypeTable types;
  for (int t = 0; t < spec.n_qtypes; ++t) {
    types.type_names.push_back("qt" + std::to_string(t));
    types.categories.push_back(static_cast<QtypeCategory>(t % 3));
    for (int j = 0; j < k; ++j)
      space.answers.push_back("qt" + std::to_string(t) + ":a" + std::to_string(j));
  }

  const SignalCodebook book = signal_codebook(spec);
  Rng rng(spec.seed);

  std::vector<std::vector<double>> train_priors, test_priors;
  for (int t = 0; t < spec.n_qtypes; ++t) {
    const int majority = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(k)));
    train_priors.push_back(type_prior(majority, k, spec.skew));
    if (spec.shift_mode == ShiftMode::inverted) {
      test_priors.push_back(type_prior((majority + 1) % k, k, spec.skew));
    } else {
      test_priors.push_back(std::vector<double>(static_cast<std::size_t>(k), 1.0 / k));
    }
  }

  Split train = generate_split(spec, "train", spec.n_train, train_priors, space, types, book, rng);
  Split test = generate_split(spec, "test", spec.n_test, test_priors, space, types, book, rng);
  return {std::move(train), std::move(test)};
}

namespace {

json header_to_json(const Split& split) {
  json h;
  h["schema_version"] = kSchemaVersion;
  h["kind"] = "ccb-split";
  h["split_name"] = split.split_name;
  h["regions"] = split.regions;
  h["d_v"] = split.d_v;
  h["vocab_size"] = split.vocab_size;
  h["answer_space"] = split.answer_space.answers;
  json types;
  types["type_names"] = split.qtype_table.type_names;
  std::vector<std::string> cats;
  for (auto c : split.qtype_table.categories) cats.emplace_back(to_string(c));
  types["categories"] = cats;
  h["qtype_table"] = types;
  return h;
}

json instance_to_json(const Split& split, const Instance& inst) {
  json rec;
  rec["schema_version"] = kSchemaVersion;
  rec["split_name"] = split.split_name;
  rec["qtype"] = split.qtype_table.type_names[static_cast<std::size_t>(inst.qtype)];
  rec["qtype_category"] = to_string(split.qtype_table.category(inst.qtype));
  rec["question_tokens"] = inst.question_tokens;
  std::vector<double> feats;
  feats.reserve(static_cast<std::size_t>(inst.image_features.size()));
  for (int r = 0; r < inst.image_features.rows(); ++r)
    for (int c = 0; c < inst.image_features.cols(); ++c) feats.push_back(inst.image_features(r, c));
  rec["image_features"] = feats;
  json labels = json::object();
  for (int a = 0; a < inst.labels.size(); ++a)
    if (inst.labels(a) != 0.0) labels[std::to_string(a)] = inst.labels(a);
  rec["labels"] = labels;
  return rec;
}

json parse_line(const std::string& line, std::size_t line_no) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw parse_error(std::string("invalid JSON record: ") + e.what(), line_no);
  }
}

const json& require_field(const json& rec, const char* field, std::size_t line_no) {
  auto it = rec.find(field);
  if (it == rec.end())
    throw parse_error(std::string("missing required field '") + field + "'", line_no);
  return *it;
}

}  // namespace

void save_split(const Split& split, const std::filesystem::path& path) {
  split.validate();
  std::ofstream out(path);
  if (!out) throw io_error("cannot open '" + path.string() + "' for writing");
  out << header_to_json(split).dump() << '\n';
  for (const Instance& inst : split.instances) out << instance_to_json(split, inst).dump() << '\n';
  if (!out) throw io_error("failed writing '" + path.string() + "'");
}

Split load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot open dataset file '" + path.string() + "'");

  std::string line;
  std::size_t line_no = 0;
  Split split;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const json rec = parse_line(line, line_no);
    if (!have_header) {
      const int version = require_field(rec, "schema_version", line_no).get<int>();
      if (version != kSchemaVersion) throw version_error("ccb-split", version, kSchemaVersion);
      if (require_field(rec, "kind", line_no).get<std::string>() != "ccb-split")
        throw parse_error("not a ccb-split file", line_no);
      split.split_name = require_field(rec, "split_name", line_no).get<std::string>();
      split.regions = require_field(rec, "regions", line_no).get<int>();
      split.d_v = require_field(rec, "d_v", line_no).get<int>();
      split.vocab_size = require_field(rec, "vocab_size", line_no).get<int>();
      split.answer_space.answers =
          require_field(rec, "answer_space", line_no).get<std::vector<std::string>>();
      const json& types = require_field(rec, "qtype_table", line_no);
      split.qtype_table.type_names =
          require_field(types, "type_names", line_no).get<std::vector<std::string>>();
      for (const auto& c :
           require_field(types, "categories", line_no).get<std::vector<std::string>>())
        split.qtype_table.categories.push_back(qtype_category_from_string(c));
      have_header = true;
      continue;
    }

    Instance inst;
    const int version = require_field(rec, "schema_version", line_no).get<int>();
    if (version != kSchemaVersion) throw version_error("ccb-split", version, kSchemaVersion);
    if (require_field(rec, "split_name", line_no).get<std::string>() != split.split_name)
      throw parse_error("record split_name does not match header", line_no);
    const std::string qtype_name = require_field(rec, "qtype", line_no).get<std::string>();
    inst.qtype = split.qtype_table.index_of(qtype_name);
    if (inst.qtype < 0) throw parse_error("unknown qtype '" + qtype_name + "'", line_no);
    const std::string cat = require_field(rec, "qtype_category", line_no).get<std::string>();
    if (qtype_category_from_string(cat) != split.qtype_table.category(inst.qtype))
      throw parse_error("qtype_category does not match the header table", line_no);
    inst.question_tokens = require_field(rec, "question_tokens", line_no).get<std::vector<int>>();
    const auto feats = require_field(rec, "image_features", line_no).get<std::vector<double>>();
    if (feats.size() != static_cast<std::size_t>(split.regions) * static_cast<std::size_t>(split.d_v))
      throw parse_error("image_features length != regions * d_v", line_no);
    inst.image_features.resize(split.regions, split.d_v);
    for (int r = 0; r < split.regions; ++r)
      for (int c = 0; c < split.d_v; ++c)
        inst.image_features(r, c) = feats[static_cast<std::size_t>(r) * split.d_v + c];
    inst.labels = Eigen::VectorXd::Zero(split.answer_space.size());
    for (const auto& [key, value] : require_field(rec, "labels", line_no).items()) {
      int idx = 0;
      try {
        idx = std::stoi(key);
      } catch (const std::exception&) {
        throw parse_error("label key '" + key + "' is not an answer index", line_no);
      }
      if (idx < 0 || idx >= split.answer_space.size())
        throw parse_error("label answer index out of range", line_no);
      inst.labels(idx) = value.get<double>();
    }
    split.instances.push_back(std::move(inst));
  }

  if (!have_header)
    throw validation_error("dataset file '" + path.string() + "' is empty (Split must be non-empty)");
  split.validate();
  return split;
}

int max_label_answer(const Instance& inst) {
  int best = 0;
  for (int a = 1; a < inst.labels.size(); ++a)
    if (inst.labels(a) > inst.labels(best)) best = a;
  return best;
}

DatasetStats dataset_stats(const Split& split) {
  split.validate();
  DatasetStats stats;
  stats.answer_histogram =
      Eigen::MatrixXi::Zero(split.qtype_table.size(), split.answer_space.size());
  for (const Instance& inst : split.instances) {
    stats.answer_histogram(inst.qtype, max_label_answer(inst)) += 1;
    stats.category_counts[split.qtype_table.category(inst.qtype)] += 1;
  }
  return stats;
}

}  // namespace ccb
