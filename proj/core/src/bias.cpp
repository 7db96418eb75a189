#include "ccb/bias.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

#include "ccb/errors.hpp"
#include "ccb/version.hpp"

namespace ccb {

using nlohmann::json;

BiasTable estimate_bias(const Split& train, double smoothing_epsilon) {
  train.validate();
  if (smoothing_epsilon < 0.0)
    throw validation_error("estimate_bias: smoothing_epsilon must be >= 0");

  BiasTable out;
  out.source_split_name = train.split_name;
  out.smoothing_epsilon = smoothing_epsilon;
  out.answers = train.answer_space.answers;
  out.type_names = train.qtype_table.type_names;

  const int n_types = train.qtype_table.size();
  const int n_answers = train.answer_space.size();
  Eigen::MatrixXd mass = Eigen::MatrixXd::Zero(n_types, n_answers);
  for (const Instance& inst : train.instances) mass.row(inst.qtype) += inst.labels.transpose();
  mass.array() += smoothing_epsilon;

  out.table.resize(n_types, n_answers);
  for (int t = 0; t < n_types; ++t) {
    const double total = mass.row(t).sum();
    if (total > 0.0) {
      out.table.row(t) = mass.row(t) / total;
    } else {
      out.table.row(t).setConstant(1.0 / n_answers);
    }
  }
  return out;
}

Eigen::VectorXd bias_for(const BiasTable& table, int qtype) {
  if (qtype < 0 || qtype >= table.n_qtypes())
    throw validation_error("bias_for: unknown qtype index " + std::to_string(qtype));
  return table.table.row(qtype).transpose();
}

Eigen::VectorXd bias_for(const BiasTable& table, const std::string& qtype_name) {
  for (int t = 0; t < table.n_qtypes(); ++t)
    if (table.type_names[static_cast<std::size_t>(t)] == qtype_name) return bias_for(table, t);
  throw validation_error("bias_for: unknown qtype '" + qtype_name + "'");
}

Eigen::VectorXd binarize(const Eigen::VectorXd& b) {
  return (b.array() > kBinarizeThreshold).cast<double>();
}

Eigen::VectorXd reweight(const Eigen::VectorXd& b, double r) {
  if (r < 0.0) throw validation_error("reweight: r must be >= 0");
  Eigen::VectorXd w(b.size());
  for (int j = 0; j < b.size(); ++j) w(j) = std::pow(std::max(0.0, 1.0 - b(j)), r);
  return w;
}

void save_bias_table(const BiasTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open '" + path.string() + "' for writing");
  json header;
  header["schema_version"] = kSchemaVersion;
  header["kind"] = "ccb-bias-table";
  header["source_split_name"] = table.source_split_name;
  header["smoothing_epsilon"] = table.smoothing_epsilon;
  header["answers"] = table.answers;
  out << header.dump() << '\n';
  for (int t = 0; t < table.n_qtypes(); ++t) {
    json row;
    row["qtype"] = table.type_names[static_cast<std::size_t>(t)];
    std::vector<double> p(table.table.row(t).begin(), table.table.row(t).end());
    row["p"] = p;
    out << row.dump() << '\n';
  }
  if (!out) throw io_error("failed writing '" + path.string() + "'");
}

BiasTable load_bias_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot open bias table file '" + path.string() + "'");

  std::string line;
  std::size_t line_no = 0;
  BiasTable table;
  bool have_header = false;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw parse_error(std::string("invalid JSON record: ") + e.what(), line_no);
    }
    if (!have_header) {
      const int version = rec.value("schema_version", -1);
      if (version != kSchemaVersion) throw version_error("ccb-bias-table", version, kSchemaVersion);
      if (rec.value("kind", "") != "ccb-bias-table")
        throw parse_error("not a ccb-bias-table file", line_no);
      table.source_split_name = rec.at("source_split_name").get<std::string>();
      table.smoothing_epsilon = rec.at("smoothing_epsilon").get<double>();
      table.answers = rec.at("answers").get<std::vector<std::string>>();
      have_header = true;
      continue;
    }
    if (!rec.contains("qtype") || !rec.contains("p"))
      throw parse_error("bias row needs 'qtype' and 'p'", line_no);
    table.type_names.push_back(rec.at("qtype").get<std::string>());
    rows.push_back(rec.at("p").get<std::vector<double>>());
    if (rows.back().size() != table.answers.size())
      throw parse_error("bias row length != answer count", line_no);
  }
  if (!have_header || rows.empty())
    throw validation_error("bias table file '" + path.string() + "' is empty");
  table.table.resize(static_cast<int>(rows.size()), static_cast<int>(table.answers.size()));
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t a = 0; a < rows[t].size(); ++a)
      table.table(static_cast<int>(t), static_cast<int>(a)) = rows[t][a];
  return table;
}

}  // namespace ccb
